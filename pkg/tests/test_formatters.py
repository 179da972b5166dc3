"""Tests for :mod:`utils.formatters`."""

import json
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
import pytest

from sensing.measurement import SelectorMask
from utils.formatters import (
    FormatError,
    decode_vector,
    dumps_report,
    encode_vector,
    read_mask,
    read_matrix,
    read_vector,
    to_jsonable,
    write_csv,
    write_json,
    write_mask,
    write_vector,
)


def test_vector_layout():
    blob = encode_vector([1.5, -2.0])
    assert len(blob) == 8 + 16
    assert blob[:8] == (2).to_bytes(8, "little")
    assert np.frombuffer(blob[8:], dtype="<f8").tolist() == [1.5, -2.0]


def test_vector_file(tmp_path, rng):
    x = rng.standard_normal(33)
    path = tmp_path / "nested" / "x.bin"
    write_vector(path, x)
    assert np.array_equal(read_vector(path), x)


@pytest.mark.parametrize("blob", [b"\x01\x02", encode_vector([1.0, 2.0])[:-1], encode_vector([1.0]) + b"\x00"])
def test_vector_rejects_bad_length(blob):
    with pytest.raises(FormatError):
        decode_vector(blob)


def test_missing_vector_file(tmp_path):
    with pytest.raises(FormatError):
        read_vector(tmp_path / "absent.bin")


def test_mask_file_is_one_based(tmp_path):
    mask = SelectorMask(n=10, delta=0.3, omega=np.array([0, 4, 9]), seed=12)
    path = tmp_path / "mask.json"
    write_mask(path, mask)
    data = json.loads(path.read_text())
    assert data["omega"] == [1, 5, 10]
    assert np.array_equal(read_mask(path).omega, mask.omega)


def test_bad_mask_file(tmp_path):
    path = tmp_path / "mask.json"
    path.write_text("{not json")
    with pytest.raises(FormatError):
        read_mask(path)


def test_read_matrix_formats(tmp_path):
    A = np.arange(6, dtype=float).reshape(2, 3)
    np.save(tmp_path / "a.npy", A)
    np.savetxt(tmp_path / "a.csv", A, delimiter=",")
    np.savetxt(tmp_path / "a.txt", A)
    for name in ("a.npy", "a.csv", "a.txt"):
        assert np.array_equal(read_matrix(tmp_path / name), A)
    np.save(tmp_path / "v.npy", np.ones(3))
    with pytest.raises(FormatError):
        read_matrix(tmp_path / "v.npy")


@dataclass
class _Report:
    value: float
    items: tuple


def test_to_jsonable():
    out = to_jsonable({"a": np.float64(1.5), "b": np.arange(3), "c": math.inf, "d": _Report(-math.inf, (np.int64(2),))})
    assert out == {"a": 1.5, "b": [0, 1, 2], "c": "inf", "d": {"value": "-inf", "items": [2]}}
    assert json.loads(dumps_report({"x": math.nan})) == {"x": "nan"}


def test_write_json(tmp_path):
    path = tmp_path / "out" / "r.json"
    write_json(path, {"s_max": math.inf})
    assert json.loads(path.read_text()) == {"s_max": "inf"}


def test_write_csv_keeps_order_and_precision(tmp_path):
    path = tmp_path / "t.csv"
    rows = [{"b": 0.1 + 0.2, "a": 1}, {"a": 2, "b": 1 / 3}]
    frame = write_csv(path, rows, ("a", "b"))
    back = pd.read_csv(path)
    assert list(back.columns) == ["a", "b"]
    assert back["b"].tolist() == [0.1 + 0.2, 1 / 3]
    assert frame.shape == (2, 2)

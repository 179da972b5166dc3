import dataclasses
import json
import math
import os
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import pandas as pd

from sensing.measurement import SelectorMask

_HEADER = np.dtype("<u8")
_PAYLOAD = np.dtype("<f8")


class FormatError(ValueError):
    """Raised on malformed vector, mask or matrix files."""


def encode_vector(x: Sequence[float] | np.ndarray) -> bytes:
    """8-byte little-endian length header followed by little-endian float64 entries."""
    arr = np.ascontiguousarray(np.asarray(x, dtype=_PAYLOAD).ravel())
    return np.array([arr.size], dtype=_HEADER).tobytes() + arr.tobytes()


def decode_vector(blob: bytes) -> np.ndarray:
    if len(blob) < _HEADER.itemsize:
        raise FormatError("vector blob shorter than its length header")
    n = int(np.frombuffer(blob[: _HEADER.itemsize], dtype=_HEADER)[0])
    expected = _HEADER.itemsize + n * _PAYLOAD.itemsize
    if len(blob) != expected:
        raise FormatError(f"vector blob has {len(blob)} bytes, header implies {expected}")
    return np.frombuffer(blob[_HEADER.itemsize :], dtype=_PAYLOAD).astype(float)


def write_vector(path: str | Path, x: Sequence[float] | np.ndarray) -> None:
    _ensure_parent(path)
    Path(path).write_bytes(encode_vector(x))


def read_vector(path: str | Path) -> np.ndarray:
    try:
        return decode_vector(Path(path).read_bytes())
    except OSError as e:
        raise FormatError(f"cannot read vector file {path}: {e}") from e


def write_mask(path: str | Path, mask: SelectorMask) -> None:
    write_json(path, mask.to_dict())


def read_mask(path: str | Path) -> SelectorMask:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"cannot read mask file {path}: {e}") from e
    return SelectorMask.from_dict(data)


def read_matrix(path: str | Path) -> np.ndarray:
    """Dense matrix from ``.npy`` or whitespace/comma separated text."""
    path = Path(path)
    try:
        if path.suffix == ".npy":
            arr = np.load(path)
        else:
            delimiter = "," if path.suffix == ".csv" else None
            arr = np.loadtxt(path, delimiter=delimiter, ndmin=2)
    except (OSError, ValueError) as e:
        raise FormatError(f"cannot read matrix file {path}: {e}") from e
    if arr.ndim != 2:
        raise FormatError(f"expected a 2-D matrix in {path}, got shape {arr.shape}")
    return np.asarray(arr, dtype=float)


def to_jsonable(obj: Any) -> Any:
    """Plain JSON types for reports: dataclasses, numpy scalars and arrays, non-finite floats."""
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return to_jsonable(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    return obj


def dumps_report(obj: Any) -> str:
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True)


def write_json(path: str | Path, obj: Any) -> None:
    _ensure_parent(path)
    Path(path).write_text(dumps_report(obj) + "\n", encoding="utf-8")


def write_csv(path: str | Path, rows: Iterable[dict[str, Any]], columns: Sequence[str]) -> pd.DataFrame:
    """Write rows in the given column order; floats keep full repr precision."""
    frame = pd.DataFrame(list(rows), columns=list(columns))
    _ensure_parent(path)
    frame.to_csv(path, index=False, float_format="%.17g")
    return frame


def _ensure_parent(path: str | Path) -> None:
    folder = os.path.dirname(os.fspath(path))
    if folder:
        os.makedirs(folder, exist_ok=True)

"""End-to-end checks of the command-line entry point."""

import json

import numpy as np
import pandas as pd
import pytest

from experiments.cli import main
from sensing.analysis import compute_parameters
from sensing.measurement import SelectorMask, make_partial_circulant
from utils.formatters import read_vector, write_mask, write_vector


def test_params(tmp_path):
    out = tmp_path / "params.json"
    assert main(["--output", str(out), "params", "--n", "65536", "--r", "16"]) == 0
    report = json.loads(out.read_text())
    expected = compute_parameters(65536, 16)
    assert report["regime"] == expected.regime == "low-sparsity"
    assert report["rho"] == pytest.approx(expected.rho)


def test_params_to_stdout(capsys):
    main(["params", "--n", "64", "--r", "4"])
    assert json.loads(capsys.readouterr().out)["n"] == 64


def test_certify(tmp_path):
    matrix = tmp_path / "eye.npy"
    np.save(matrix, np.eye(6))
    out = tmp_path / "cert.json"
    main(["--output", str(out), "--seed", "1", "certify", "--matrix", str(matrix), "--r", "3", "--samples", "100"])
    report = json.loads(out.read_text())
    assert report["certificate"]["s_max"] == "inf"
    assert report["certificate"]["valid"] is True
    assert report["cone_check"]["violations"] == 0


def test_certify_error_exits(tmp_path):
    matrix = tmp_path / "wide.npy"
    np.save(matrix, np.ones((2, 6)))
    with pytest.raises(SystemExit) as exc:
        main(["certify", "--matrix", str(matrix), "--r", "4"])
    assert exc.value.code == 2


def test_recover(tmp_path):
    n = 32
    rng = np.random.default_rng(4)
    xi = rng.standard_normal(n)
    mask = SelectorMask(n=n, delta=1.0, omega=np.arange(n))
    x = np.zeros(n)
    x[5] = -1.25
    write_vector(tmp_path / "xi.bin", xi)
    write_mask(tmp_path / "mask.json", mask)
    write_vector(tmp_path / "y.bin", make_partial_circulant(xi, mask).matvec(x))
    out = tmp_path / "report.json"
    main([
        "--output", str(out),
        "recover",
        "--xi", str(tmp_path / "xi.bin"),
        "--mask", str(tmp_path / "mask.json"),
        "--y", str(tmp_path / "y.bin"),
        "--x-out", str(tmp_path / "x.bin"),
    ])
    report = json.loads(out.read_text())
    assert report["result"]["status"] == "converged"
    assert report["certificate"]["certified"] is True
    assert np.allclose(read_vector(tmp_path / "x.bin"), x, atol=1e-6)


def test_structure_check_csv(tmp_path):
    out = tmp_path / "structure.csv"
    main(["--seed", "3", "--output", str(out), "structure-check", "--n", "64", "--r", "2", "--samples", "20"])
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["sample", "support", "l2_scaled", "topk_scaled", "regular"]
    assert len(frame) == 20
    summary = json.loads(out.with_suffix(".json").read_text())
    assert summary["sample_count"] == 20


def test_phase_diagram_command(tmp_path):
    config = tmp_path / "exp.toml"
    config.write_text('n = 16\ns_grid = [1]\nm_grid = [16]\ntrials = 2\n', encoding="utf-8")
    out = tmp_path / "phase.csv"
    main(["--config", str(config), "--output", str(out), "--seed", "5", "phase-diagram"])
    frame = pd.read_csv(out)
    assert frame.loc[0, "trials"] == 2 and frame.loc[0, "seed"] == 5

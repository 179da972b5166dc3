"""Tests for :mod:`sensing.solver`."""

import math

import numpy as np
import pytest

from sensing.generators import trial_rng
from sensing.measurement import make_partial_circulant, make_selector_mask
from sensing.solver import (
    STATUS_CONVERGED,
    STATUS_DEGENERATE,
    SolverConfig,
    SolverError,
    certify_optimality,
    dual_value,
    estimate_operator_norm,
    nsp_constants,
    parse_q,
    predicted_error_bounds,
    project_l2_ball,
    project_linf_ball,
    soft_threshold,
    solve_bpdn,
)


def _sparse(rng, n, s):
    x = np.zeros(n)
    support = rng.choice(n, size=s, replace=False)
    x[support] = rng.standard_normal(s)
    return x


def _dense_instance(seed, m=40, n=80, s=3):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((m, n)) / math.sqrt(m)
    x = _sparse(rng, n, s)
    return B, x, B @ x


def _circulant_instance(seed, n=128, delta=0.5, s=4):
    rng = trial_rng(seed, 0)
    B = make_partial_circulant(rng.standard_normal(n), make_selector_mask(n, delta, seed))
    x = _sparse(rng, n, s)
    return B, x, B.matvec(x)


# ##############################################################################
# # PRIMITIVES
# ##############################################################################
def test_soft_threshold():
    assert np.array_equal(soft_threshold(np.array([3.0, -0.5, -2.0, 1.0]), 1.0), [2.0, 0.0, -1.0, 0.0])


def test_projections():
    u = np.array([3.0, 4.0])
    assert np.allclose(project_l2_ball(u, 1.0), [0.6, 0.8])
    assert project_l2_ball(u, 10.0) is u
    assert np.array_equal(project_linf_ball(np.array([2.0, -0.5, -3.0]), 1.0), [1.0, -0.5, -1.0])


def test_parse_q():
    assert parse_q(2) == 2.0
    assert math.isinf(parse_q("inf"))
    assert math.isinf(parse_q(float("inf")))
    with pytest.raises(SolverError):
        parse_q(3)
    with pytest.raises(SolverError):
        SolverConfig(q=1)


def test_config_validation():
    with pytest.raises(SolverError):
        SolverConfig(eta=-1.0)
    with pytest.raises(SolverError):
        SolverConfig(sigma=0.5)
    with pytest.raises(SolverError):
        SolverConfig.from_mapping({"max_iter": 10})
    cfg = SolverConfig.from_mapping({"q": "inf", "max_iters": 50})
    assert math.isinf(cfg.q) and cfg.max_iters == 50
    assert cfg.to_dict()["q"] == "inf"


def test_operator_norm_estimate(rng):
    B = rng.standard_normal((20, 30))
    assert estimate_operator_norm(B, iters=500) == pytest.approx(np.linalg.norm(B, 2), rel=1e-4)
    assert estimate_operator_norm(np.zeros((3, 4))) == 0.0


def test_dual_value_rescales():
    y = np.array([1.0, 0.0])
    p = np.array([-2.0, 0.0])
    # -<p, y> = 2, ||B*p||_inf = 4 -> bound 0.5
    assert dual_value(p, np.array([4.0, -1.0]), y, 0.0, 2.0) == pytest.approx(0.5)
    assert dual_value(-p, np.array([4.0]), y, 0.0, 2.0) == 0.0
    assert dual_value(p, np.array([4.0]), y, 1.0, 2.0) == 0.0


# ##############################################################################
# # DEGENERATE INPUTS
# ##############################################################################
def test_zero_measurements_give_zero(rng):
    B = rng.standard_normal((10, 20))
    result = solve_bpdn(B, np.zeros(10))
    assert result.status == STATUS_CONVERGED
    assert result.iterations == 0
    assert np.array_equal(result.x_sharp, np.zeros(20))


def test_eta_covering_y_gives_zero(rng):
    B = rng.standard_normal((10, 20))
    y = rng.standard_normal(10)
    result = solve_bpdn(B, y, SolverConfig(eta=float(np.linalg.norm(y))))
    assert result.converged and result.objective == 0.0
    assert not np.any(result.x_sharp)
    inf_result = solve_bpdn(B, y, SolverConfig(q="inf", eta=float(np.max(np.abs(y)))))
    assert inf_result.converged and not np.any(inf_result.x_sharp)


def test_empty_mask_is_degenerate(rng):
    result = solve_bpdn(np.zeros((0, 12)), np.array([]))
    assert result.status == STATUS_DEGENERATE
    assert np.array_equal(result.x_sharp, np.zeros(12))


def test_zero_operator_rejected():
    with pytest.raises(SolverError):
        solve_bpdn(np.zeros((5, 10)), np.ones(5))


def test_bad_data_rejected(rng):
    B = rng.standard_normal((4, 8))
    with pytest.raises(SolverError):
        solve_bpdn(B, np.array([1.0, np.nan, 0.0, 0.0]))
    with pytest.raises(SolverError):
        solve_bpdn(B, np.ones(5))


def test_step_sizes_checked(rng):
    B = 3.0 * np.eye(6)
    with pytest.raises(SolverError):
        solve_bpdn(B, np.ones(6), SolverConfig(sigma=1.0, tau_step=1.0))


# ##############################################################################
# # RECOVERY AND CERTIFICATES
# ##############################################################################
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_exact_recovery_dense(seed):
    B, x, y = _dense_instance(seed)
    cfg = SolverConfig()
    result = solve_bpdn(B, y, cfg)
    assert result.converged
    assert np.linalg.norm(result.x_sharp - x) <= 1e-6 * np.linalg.norm(x)
    assert certify_optimality(B, y, cfg, result).certified


def test_exact_recovery_partial_circulant():
    B, x, y = _circulant_instance(3)
    result = solve_bpdn(B, y)
    assert result.converged
    assert np.linalg.norm(result.x_sharp - x) <= 1e-6 * np.linalg.norm(x)
    assert result.gap_certificate <= 1e-5 * max(1.0, result.objective)
    assert result.lower_bound <= result.objective + 1e-12


def test_noisy_solution_is_feasible_and_certified():
    B, x, y = _dense_instance(4)
    noise = np.random.default_rng(40).standard_normal(y.size)
    eta = 0.01
    y = y + eta * noise / np.linalg.norm(noise)
    cfg = SolverConfig(eta=eta)
    result = solve_bpdn(B, y, cfg)
    assert result.converged
    assert np.linalg.norm(B @ result.x_sharp - y) <= eta * (1 + 1e-6)
    # The truth is feasible, so the minimizer cannot have a larger l1 norm.
    assert result.objective <= np.sum(np.abs(x)) + 1e-6
    assert certify_optimality(B, y, cfg, result).certified


def test_perturbed_point_has_larger_gap():
    B, _, y = _dense_instance(5)
    cfg = SolverConfig()
    result = solve_bpdn(B, y, cfg)
    base = certify_optimality(B, y, cfg, result)
    moved = result.x_sharp.copy()
    moved[np.flatnonzero(moved == 0.0)[0]] += 0.1
    worse = certify_optimality(B, y, cfg, result, x=moved)
    assert worse.gap > base.gap
    assert worse.primal == pytest.approx(base.primal + 0.1)


def test_zero_solution_has_zero_gap(rng):
    B = rng.standard_normal((6, 12))
    y = rng.standard_normal(6)
    cfg = SolverConfig(eta=2.0 * float(np.linalg.norm(y)))
    report = certify_optimality(B, y, cfg, solve_bpdn(B, y, cfg))
    assert report.gap == 0.0 and report.certified


def test_scale_covariance():
    B, _, y = _dense_instance(6)
    a = solve_bpdn(B, y)
    b = solve_bpdn(B, 1000.0 * y)
    assert a.converged and b.converged
    assert np.linalg.norm(b.x_sharp / 1000.0 - a.x_sharp) <= 1e-6 * np.linalg.norm(a.x_sharp)


def test_objective_trace_is_nonincreasing():
    B, _, y = _circulant_instance(7)
    result = solve_bpdn(B, y)
    trace = result.objective_trace
    assert trace
    assert all(a >= b for a, b in zip(trace, trace[1:]))


def test_linf_constraint_with_quantized_data():
    rng = np.random.default_rng(8)
    m, n = 48, 64
    B = rng.standard_normal((m, n)) / math.sqrt(m)
    x = _sparse(rng, n, 3)
    eta = 0.005
    y = np.round(B @ x / (2 * eta)) * (2 * eta)
    result = solve_bpdn(B, y, SolverConfig(q="inf", eta=eta))
    assert np.max(np.abs(B @ result.x_sharp - y)) <= eta + 1e-6
    assert result.objective <= np.sum(np.abs(x)) * (1 + 1e-3)


def test_summary_keys():
    B, _, y = _dense_instance(9)
    summary = solve_bpdn(B, y).summary()
    for key in ("status", "iterations", "objective", "constraint_residual", "gap_certificate"):
        assert key in summary


@pytest.mark.slow
def test_gap_certification_over_many_instances():
    converged = 0
    for seed in range(50):
        rng = trial_rng(99, seed)
        n = 128
        B = make_partial_circulant(rng.standard_normal(n), make_selector_mask(n, 0.5, seed))
        x = _sparse(rng, n, 5)
        y = B.matvec(x)
        cfg = SolverConfig()
        result = solve_bpdn(B, y, cfg)
        assert result.converged
        assert result.gap_certificate <= 1e-5 * max(1.0, result.objective)
        assert certify_optimality(B, y, cfg, result).certified
        converged += 1
    assert converged == 50


# ##############################################################################
# # ERROR BOUNDS
# ##############################################################################
def test_nsp_constants():
    C, D = nsp_constants(0.5, 1.0)
    assert C == pytest.approx(4.5) and D == pytest.approx(7.0)
    C, D = nsp_constants(1.0 / 3.0, 2.0)
    assert C == pytest.approx(8.0 / 3.0) and D == pytest.approx(10.0)
    with pytest.raises(SolverError):
        nsp_constants(1.0, 1.0)
    with pytest.raises(SolverError):
        nsp_constants(0.5, 0.0)


def test_predicted_error_bounds():
    l1, l2 = predicted_error_bounds(0.5, 1.0, s=4, eta=0.1, sigma_s=0.2)
    assert l1 == pytest.approx(4.5 * 0.2 + 7.0 * 2.0 * 0.1)
    assert l2 == pytest.approx(4.5 * 0.2 / 2.0 + 7.0 * 0.1)
    assert predicted_error_bounds(0.5, 1.0, s=3, eta=0.0, sigma_s=0.0) == (0.0, 0.0)
    with pytest.raises(SolverError):
        predicted_error_bounds(0.5, 1.0, s=0, eta=0.1, sigma_s=0.0)


def test_normalized_bounds_scale_with_m():
    plain = predicted_error_bounds(0.5, 1.0, s=2, eta=0.3, sigma_s=0.0)
    scaled = predicted_error_bounds(0.5, 4.0, s=2, eta=0.3, sigma_s=0.0, m=16, normalized=True)
    assert scaled == pytest.approx(plain)
    with pytest.raises(SolverError):
        predicted_error_bounds(0.5, 1.0, s=2, eta=0.3, sigma_s=0.0, normalized=True)

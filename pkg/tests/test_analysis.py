"""Tests for :mod:`sensing.analysis`."""

import itertools
import math

import numpy as np
import pytest

from sensing.analysis import (
    AnalysisError,
    ThetaConstants,
    best_s_term_error,
    compute_parameters,
    cone_membership,
    gamma_distance,
    greedy_separated_net,
    measurement_threshold,
    nonincreasing_rearrangement,
    psi1n_norm,
    regularity_check,
    topk_norm,
)
from sensing.measurement import fourier_triple, gamma_materialize, make_hadamard_type

X0 = np.array([3.0, 1.0, -2.0, 0.0])


# ##############################################################################
# # REARRANGEMENT NORMS
# ##############################################################################
def test_rearrangement():
    assert np.array_equal(nonincreasing_rearrangement(X0), [3.0, 2.0, 1.0, 0.0])
    assert np.array_equal(nonincreasing_rearrangement(-np.ones(5)), np.ones(5))


def test_rearrangement_matches_sort(rng):
    x = rng.standard_normal(200)
    assert np.array_equal(nonincreasing_rearrangement(x), np.sort(np.abs(x))[::-1])


def test_topk_examples(rng):
    assert math.isclose(topk_norm(X0, 2), math.sqrt(13))
    x = rng.standard_normal(9)
    assert math.isclose(topk_norm(x, 9), np.linalg.norm(x))
    assert math.isclose(topk_norm(x, 1), np.max(np.abs(x)))


def test_topk_matches_exhaustive_subsets(rng):
    n = 10
    x = rng.standard_normal(n)
    for k in range(1, n + 1):
        brute = max(np.linalg.norm(x[list(I)]) for I in itertools.combinations(range(n), k))
        assert topk_norm(x, k) == pytest.approx(brute, rel=1e-14)


def test_topk_is_a_monotone_norm(rng):
    for _ in range(50):
        x, y = rng.standard_normal(12), rng.standard_normal(12)
        c = rng.standard_normal()
        for k in (1, 4, 12):
            assert topk_norm(x + y, k) <= topk_norm(x, k) + topk_norm(y, k) + 1e-12
            assert math.isclose(topk_norm(c * x, k), abs(c) * topk_norm(x, k), rel_tol=1e-12)
        assert topk_norm(x, 3) <= topk_norm(x, 4)


def test_topk_range():
    with pytest.raises(AnalysisError):
        topk_norm(X0, 0)
    with pytest.raises(AnalysisError):
        topk_norm(X0, 5)


def test_best_s_term_examples():
    assert best_s_term_error(X0, 2) == 1.0
    assert best_s_term_error(X0, 0) == 6.0
    assert best_s_term_error(X0, 3) == 0.0
    assert best_s_term_error(X0, 10) == 0.0


def test_best_s_term_matches_exhaustive(rng):
    n = 10
    x = rng.standard_normal(n)
    for s in range(0, n + 1):
        brute = min(np.sum(np.abs(np.delete(x, list(S)))) for S in itertools.combinations(range(n), s))
        assert best_s_term_error(x, s) == pytest.approx(brute, rel=1e-12, abs=1e-15)


def test_best_s_term_identities(rng):
    x = rng.standard_normal(30)
    errors = [best_s_term_error(x, s) for s in range(31)]
    assert all(a >= b for a, b in zip(errors, errors[1:]))
    head = np.sum(nonincreasing_rearrangement(x)[:7])
    assert math.isclose(errors[7] + head, np.sum(np.abs(x)), rel_tol=1e-12)


# ##############################################################################
# # CONE AND REGULARITY
# ##############################################################################
def test_cone_examples():
    v = np.zeros(50)
    v[[3, 9]] = [1.0, -2.0]
    assert cone_membership(v, 0.5, 2)
    assert not cone_membership(np.ones(100), 0.5, 1)


def test_cone_matches_exhaustive(rng):
    n = 12
    outcomes = set()
    for trial in range(40):
        v = rng.standard_normal(n) * 0.6 ** rng.permutation(n)
        for s in range(1, 5):
            for nu in (0.25, 0.5, 0.9):
                brute = any(
                    np.linalg.norm(v[list(S)]) >= nu / math.sqrt(s) * np.sum(np.abs(np.delete(v, list(S))))
                    for S in itertools.combinations(range(n), s)
                )
                assert cone_membership(v, nu, s) == brute
                outcomes.add(brute)
    assert outcomes == {True, False}


def test_cone_scale_invariance(rng):
    for _ in range(20):
        v = rng.standard_normal(15) * 0.5 ** np.arange(15)
        for c in (-3.0, 0.01, 7.0):
            assert cone_membership(v, 0.5, 3) == cone_membership(c * v, 0.5, 3)


def test_cone_parameter_range():
    with pytest.raises(AnalysisError):
        cone_membership(X0, 0.0, 1)
    with pytest.raises(AnalysisError):
        cone_membership(X0, 1.0, 1)
    with pytest.raises(AnalysisError):
        cone_membership(X0, 0.5, 5)


def test_regularity_examples():
    n = 64
    flat = regularity_check(np.ones(n), alpha=1.0, theta=0.5)
    assert flat.regular and flat.count == n
    spike = np.zeros(n)
    spike[0] = math.sqrt(n)
    peaked = regularity_check(spike, alpha=1.0, theta=0.5)
    assert not peaked.regular and peaked.count == 1
    pair = regularity_check([1.0, 1.0, 0.0, 0.0], alpha=0.5, theta=0.5)
    assert pair.count == 2 and math.isclose(pair.threshold, math.sqrt(2) / 4)


def test_regularity_degenerate_and_range():
    result = regularity_check(np.zeros(5), alpha=0.5, theta=0.5)
    assert result.degenerate and not result.regular and result.count == 5
    with pytest.raises(AnalysisError):
        regularity_check(np.ones(4), alpha=0.0, theta=0.5)
    with pytest.raises(AnalysisError):
        regularity_check(np.ones(4), alpha=1.0, theta=1.5)


# ##############################################################################
# # SPARSITY PARAMETERS
# ##############################################################################
def _reference_parameters(n, r, kappa4=1.0):
    rho = 10 * np.log2(np.e) * max(1.0, np.log(np.e * r) / np.log(np.e * n / r))
    two_s0 = kappa4 * n / r
    two_s1 = rho * r * np.log(np.e * n / r)
    alpha = max(1.0, np.log(two_s1 / two_s0))
    return rho, two_s0, two_s1, alpha


def test_parameters_small_r_rho():
    for n, r in [(1024, 8), (4096, 64), (100, 10)]:
        params = compute_parameters(n, r, kappa4=1.0, theta_constants=ThetaConstants())
        assert math.isclose(params.rho, 10 * math.log2(math.e))


def test_parameters_against_independent_evaluation():
    n, r = 2**16, 2**4
    params = compute_parameters(n, r, kappa4=1.0, theta_constants=ThetaConstants())
    rho, two_s0, two_s1, alpha = _reference_parameters(n, r)
    assert math.isclose(2**params.s0, 4096.0, rel_tol=1e-12)
    assert math.isclose(2**params.s1, two_s1, rel_tol=1e-12)
    assert math.isclose(params.rho, rho, rel_tol=1e-12)
    assert math.isclose(params.alpha_r, alpha, rel_tol=1e-12)
    assert params.regime == ("low-sparsity" if two_s0 >= two_s1 else "high-sparsity")


def test_regime_and_alpha_consistency():
    for n in (64, 1024, 2**14):
        for r in range(1, n // 2 + 1, max(1, n // 64)):
            params = compute_parameters(n, r, kappa4=1.0, theta_constants=ThetaConstants())
            if params.regime == "low-sparsity":
                assert params.alpha_r == 1.0
            elif (params.s1 - params.s0) * math.log(2) > 1:
                assert params.alpha_r > 1.0


def test_theta_branches():
    low = compute_parameters(1024, 8, kappa4=1.0, theta_constants=ThetaConstants())
    assert low.theta == 1.0
    high = compute_parameters(1024, 256, kappa4=1.0, theta_constants=ThetaConstants())
    assert high.regime == "high-sparsity"
    assert math.isclose(high.theta, 1.0 / (high.alpha_r**2 * math.log(math.e * high.alpha_r)))
    assert high.beyond_high_sparsity_range


def test_parameters_range_and_report():
    with pytest.raises(AnalysisError):
        compute_parameters(64, 33)
    with pytest.raises(AnalysisError):
        compute_parameters(64, 0)
    report = compute_parameters(64, 4).to_dict()
    for key in ("n", "r", "kappa4", "rho", "s0", "s1", "alpha_r", "theta", "regime"):
        assert key in report


def test_measurement_threshold_regimes():
    small = measurement_threshold(4096, 4, c1=1.0, c2=1.0, c3=1.0)
    assert small.regime == "low-sparsity"
    assert math.isclose(small.m_required, 4 * math.log(math.e * 4096 / 4))
    big = measurement_threshold(4096, 200, c1=1.0, c2=1.0, c3=1.0)
    assert big.regime == "high-sparsity"
    assert big.alpha_s >= 1.0
    assert big.m_required >= 200 * math.log(math.e * 4096 / 200)
    with pytest.raises(AnalysisError):
        measurement_threshold(100, 0)


# ##############################################################################
# # NETS AND ORLICZ-TYPE NORMS
# ##############################################################################
def test_gamma_distance_is_operator_norm(rng):
    n = 32
    U, W, O = fourier_triple(n)
    x, y = rng.standard_normal(n), rng.standard_normal(n)
    diff = gamma_materialize(U, W, O, x) - gamma_materialize(U, W, O, y)
    assert math.isclose(gamma_distance(x, y, W), np.linalg.norm(diff, 2), rel_tol=1e-9)


def test_net_extremes(rng):
    pts = rng.standard_normal((30, 4))
    assert greedy_separated_net(pts, eps=100.0) == [0]
    assert greedy_separated_net(pts, eps=1e-9) == list(range(30))


def test_net_separation_and_cover(rng):
    pts = rng.standard_normal((1000, 8))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    eps = 0.5
    kept = greedy_separated_net(pts, eps)
    dists = np.linalg.norm(pts[:, None, :] - pts[None, kept, :], axis=-1)
    sub = dists[kept]
    np.fill_diagonal(sub, np.inf)
    assert np.min(sub) >= eps
    assert np.all(np.min(dists, axis=1) < eps + 1e-12)


def test_net_scaled_infinity_metric(rng):
    n = 16
    W = make_hadamard_type(n, "walsh")
    pts = rng.standard_normal((100, n)) / n
    eps = 0.8
    kept = greedy_separated_net(pts, eps, metric="scaled-infinity", W=W)
    for i, a in enumerate(kept):
        for b in kept[i + 1 :]:
            assert gamma_distance(pts[a], pts[b], W) >= eps
    for p in pts:
        assert min(gamma_distance(p, pts[k], W) for k in kept) < eps + 1e-12
    with pytest.raises(AnalysisError):
        greedy_separated_net(pts, eps, metric="scaled-infinity")


def test_psi1n_norm():
    n = 8
    j = np.arange(1, n + 1)
    assert math.isclose(psi1n_norm(np.log(math.e * n / j)), 1.0)
    e1 = np.zeros(n)
    e1[0] = 1.0
    assert math.isclose(psi1n_norm(e1), 1 / math.log(8 * math.e))
    a = np.random.default_rng(0).standard_normal(n)
    assert math.isclose(psi1n_norm(-2.5 * a), 2.5 * psi1n_norm(a))

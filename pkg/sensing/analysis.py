"""Rearrangement norms, sparsity functionals and the sparsity-dependent parameters.

Logs are natural except where a base-2 exponent is named (s0, s1).
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Optional, Sequence

import numpy as np

from config.settings import get_constant_settings
from sensing.measurement import HadamardTypeMatrix, as_real_vector

logger = logging.getLogger(__name__)

LOG2E = math.log2(math.e)


class AnalysisError(ValueError):
    """Raised when a functional is evaluated outside its parameter range."""


def nonincreasing_rearrangement(x: Any) -> np.ndarray:
    """|x| sorted descending; ties keep their original index order."""
    mags = np.abs(np.asarray(x, dtype=float))
    order = np.argsort(-mags, kind="stable")
    return mags[order]


def _top_indices(x: np.ndarray, k: int) -> np.ndarray:
    return np.argsort(-np.abs(x), kind="stable")[:k]


def topk_norm(x: Any, k: int) -> float:
    """||x||_[k]: Euclidean norm of the k largest-magnitude coordinates."""
    x = np.asarray(x, dtype=float)
    if not 1 <= k <= x.size:
        raise AnalysisError(f"k must lie in [1, {x.size}], got {k}")
    head = nonincreasing_rearrangement(x)[:k]
    return float(np.linalg.norm(head))


def best_s_term_error(x: Any, s: int) -> float:
    """sigma_s(x)_1, the l1 tail beyond the s largest magnitudes."""
    x = np.asarray(x, dtype=float)
    if s < 0:
        raise AnalysisError(f"s must be >= 0, got {s}")
    return float(np.sum(nonincreasing_rearrangement(x)[s:]))


def cone_membership(v: Any, nu: float, s: int) -> bool:
    """Whether ||v_S||_2 >= nu / sqrt(s) * ||v_{S^c}||_1 for some |S| = s.

    The top-s support maximizes the left side and minimizes the right side
    at once, so checking it alone decides the existence question.
    """
    v = np.asarray(v, dtype=float)
    if not 0.0 < nu < 1.0:
        raise AnalysisError(f"nu must lie in (0, 1), got {nu}")
    if not 1 <= s <= v.size:
        raise AnalysisError(f"s must lie in [1, {v.size}], got {s}")
    mags = nonincreasing_rearrangement(v)
    head = float(np.linalg.norm(mags[:s]))
    tail = float(np.sum(mags[s:]))
    return head >= nu / math.sqrt(s) * tail


@dataclass(frozen=True)
class RegularityResult:
    regular: bool
    count: int
    threshold: float
    degenerate: bool = False


def regularity_check(x: Any, alpha: float, theta: float) -> RegularityResult:
    """Count coordinates with |x_i| >= ||x||_2 * alpha / sqrt(n); regular iff count >= theta * n."""
    x = as_real_vector(x, "x")
    n = x.size
    if alpha <= 0:
        raise AnalysisError(f"alpha must be > 0, got {alpha}")
    if not 0.0 < theta <= 1.0:
        raise AnalysisError(f"theta must lie in (0, 1], got {theta}")
    norm = float(np.linalg.norm(x))
    if norm == 0.0:
        return RegularityResult(regular=False, count=n, threshold=0.0, degenerate=True)
    threshold = norm * alpha / math.sqrt(n)
    count = int(np.count_nonzero(np.abs(x) >= threshold))
    return RegularityResult(regular=count >= theta * n, count=count, threshold=threshold)


@dataclass(frozen=True)
class ThetaConstants:
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 1.0
    c4: float = 1.0

    @classmethod
    def from_settings(cls) -> "ThetaConstants":
        consts = get_constant_settings()
        return cls(
            c1=consts["theta_c1"],
            c2=consts["theta_c2"],
            c3=consts["theta_c3"],
            c4=consts["theta_c4"],
        )


@dataclass(frozen=True)
class SparsityParameters:
    n: int
    r: int
    kappa4: float
    rho: float
    s0: float
    s1: float
    alpha_r: float
    theta: float
    regime: str
    theta_constants: ThetaConstants
    theta_branch_threshold: float
    beyond_high_sparsity_range: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "r": self.r,
            "kappa4": self.kappa4,
            "rho": self.rho,
            "s0": self.s0,
            "s1": self.s1,
            "alpha_r": self.alpha_r,
            "theta": self.theta,
            "regime": self.regime,
            "theta_constants": asdict(self.theta_constants),
            "theta_branch_threshold": self.theta_branch_threshold,
            "beyond_high_sparsity_range": self.beyond_high_sparsity_range,
        }


def compute_parameters(
    n: int,
    r: int,
    kappa4: Optional[float] = None,
    theta_constants: Optional[ThetaConstants] = None,
) -> SparsityParameters:
    if n < 2 or not 1 <= r <= n / 2:
        raise AnalysisError(f"r must satisfy 1 <= r <= n/2, got n={n}, r={r}")
    if kappa4 is None:
        kappa4 = float(get_constant_settings()["kappa4"])
    if kappa4 <= 0:
        raise AnalysisError(f"kappa4 must be > 0, got {kappa4}")
    consts = theta_constants or ThetaConstants.from_settings()

    log_en_r = math.log(math.e * n / r)
    rho = 10.0 * LOG2E * max(1.0, math.log(math.e * r) / log_en_r)
    s0 = math.log2(kappa4 * n / r)
    s1 = math.log2(rho * r * log_en_r)
    alpha_r = max(1.0, (s1 - s0) * math.log(2.0))
    regime = "low-sparsity" if s0 >= s1 else "high-sparsity"

    inner = math.log(consts.c2 * n / kappa4)
    branch = consts.c2 * math.sqrt(kappa4 * n / inner) if inner > 0 else math.inf
    if r <= branch:
        theta = consts.c1
    else:
        theta = consts.c3 / (alpha_r**2 * math.log(math.e * alpha_r))
    beyond = r > consts.c4 * n / math.log(n) ** 4
    if beyond:
        logger.debug("r=%d exceeds c4 n / log^4 n for n=%d", r, n)

    return SparsityParameters(
        n=n,
        r=r,
        kappa4=kappa4,
        rho=rho,
        s0=s0,
        s1=s1,
        alpha_r=alpha_r,
        theta=theta,
        regime=regime,
        theta_constants=consts,
        theta_branch_threshold=branch,
        beyond_high_sparsity_range=beyond,
    )


@dataclass(frozen=True)
class ThresholdPrediction:
    n: int
    s: int
    regime: str
    alpha_s: float
    m_required: float
    m_previous_bound: float
    beyond_range: bool

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def measurement_threshold(
    n: int,
    s: int,
    c1: Optional[float] = None,
    c2: Optional[float] = None,
    c3: Optional[float] = None,
) -> ThresholdPrediction:
    """Two-regime number of measurements sufficient for s-sparse recovery.

    Below c2 sqrt(n / log n) it is c3 s log(en/s); above, the extra factor
    alpha_s^2 log(e alpha_s) appears with
    alpha_s = log(s^2 / n * max(log(en/s), log s)), floored at 1.
    """
    if n < 2 or not 1 <= s <= n:
        raise AnalysisError(f"s must lie in [1, n], got n={n}, s={s}")
    consts = get_constant_settings()
    c1 = consts["threshold_c1"] if c1 is None else c1
    c2 = consts["threshold_c2"] if c2 is None else c2
    c3 = consts["threshold_c3"] if c3 is None else c3

    base = c3 * s * math.log(math.e * n / s)
    split = c2 * math.sqrt(n / math.log(n))
    raw = (s * s / n) * max(math.log(math.e * n / s), math.log(s))
    alpha_s = max(1.0, math.log(raw))
    if s <= split:
        regime, m_required = "low-sparsity", base
    else:
        regime, m_required = "high-sparsity", base * alpha_s**2 * math.log(math.e * alpha_s)
    previous = c3 * s * math.log(max(s, 2)) ** 2 * math.log(n) ** 2
    return ThresholdPrediction(
        n=n,
        s=s,
        regime=regime,
        alpha_s=alpha_s,
        m_required=m_required,
        m_previous_bound=previous,
        beyond_range=s > c1 * n / math.log(n) ** 4,
    )


def gamma_distance(x: Any, y: Any, W: HadamardTypeMatrix) -> float:
    """sqrt(n) * ||W(x - y)||_inf, the operator-norm distance between Gamma_x and Gamma_y."""
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return math.sqrt(W.n) * float(np.max(np.abs(W.apply(diff))))


def greedy_separated_net(
    points: Sequence[Any] | np.ndarray,
    eps: float,
    metric: str = "euclidean",
    W: Optional[HadamardTypeMatrix] = None,
) -> list[int]:
    """Indices of a maximal eps-separated subset, kept in input order.

    A point is retained iff it lies at distance >= eps from every retained
    point, so the result is also an eps-cover of the input.
    """
    if eps <= 0:
        raise AnalysisError(f"eps must be > 0, got {eps}")
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        return []
    if pts.ndim == 1:
        pts = pts[:, None]

    if metric == "euclidean":
        coords, reduce = pts, lambda d: np.linalg.norm(d, axis=-1)
    elif metric == "scaled-infinity":
        if W is None:
            raise AnalysisError("scaled-infinity metric needs the matrix W")
        coords = W.apply(pts)
        scale = math.sqrt(W.n)
        reduce = lambda d: scale * np.max(np.abs(d), axis=-1)  # noqa: E731
    else:
        raise AnalysisError(f"unknown metric {metric!r}")

    kept: list[int] = [0]
    for idx in range(1, coords.shape[0]):
        if np.all(reduce(coords[kept] - coords[idx]) >= eps):
            kept.append(idx)
    return kept


def psi1n_norm(a: Any) -> float:
    """max_j a_j* / log(en/j) over the nonincreasing rearrangement."""
    mags = nonincreasing_rearrangement(a)
    if mags.size == 0:
        return 0.0
    j = np.arange(1, mags.size + 1)
    return float(np.max(mags / np.log(math.e * mags.size / j)))

"""Exact null space certification for small matrices and Monte Carlo structure checks.

Certification goes through the restricted infimum over r-sparse unit vectors
and the largest column norm: together they bound the sparsity level for
which the robust null space property holds. The Monte Carlo checks report
distributions only; the constants they relate to are existence-only.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np
from scipy.special import comb

from config.settings import get_constant_settings, get_runtime_settings
from sensing.analysis import (
    SparsityParameters,
    cone_membership,
    nonincreasing_rearrangement,
    regularity_check,
    topk_norm,
)
from sensing.generators import SubgaussianEnsemble, get_ensemble, sample, trial_rng
from sensing.measurement import GammaOperator, HadamardTypeMatrix, unit_gamma_responses
from utils.parallel import run_ordered
from utils.telemetry import get_telemetry_logger

logger = logging.getLogger(__name__)

SLACK_TOL = 1e-9
CONE_TOL = 1e-9
QUANTILE_LEVELS = (0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99)
_SVD_BATCH = 4096


class CertificationError(RuntimeError):
    """Raised when exact certification is infeasible or meaningless."""


@dataclass(frozen=True)
class RestrictedInfimum:
    """inf of ||Ax||_2 over unit vectors supported on r coordinates."""

    value: float
    support: tuple[int, ...]
    rank_deficient: bool
    supports_checked: int

    @property
    def tau(self) -> float:
        return math.inf if self.value == 0.0 else 1.0 / self.value


def _smallest_singular_values(A_T: np.ndarray, supports: np.ndarray) -> np.ndarray:
    # A_T[supports] has shape (batch, r, m); its singular values are those of A_S.
    return np.linalg.svd(A_T[supports], compute_uv=False)[:, -1]


def brute_force_tau(A: Any, r: int, cap: Optional[int] = None, workers: int = 1) -> RestrictedInfimum:
    """Minimum over all r-subsets S of the smallest singular value of A_S."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise CertificationError(f"A must be a matrix, got shape {A.shape}")
    m, n = A.shape
    if not 1 <= r <= n:
        raise CertificationError(f"r must lie in [1, {n}], got {r}")
    if r > m:
        # More columns than rows: every A_S has a kernel.
        return RestrictedInfimum(value=0.0, support=tuple(range(r)), rank_deficient=True, supports_checked=0)

    cap = int(cap if cap is not None else get_runtime_settings()["enumeration_cap"])
    total = int(comb(n, r, exact=True))
    if total > cap:
        raise CertificationError(f"C({n}, {r}) = {total} supports exceeds the enumeration cap {cap}")

    A_T = np.ascontiguousarray(A.T)
    supports = np.fromiter(
        itertools.chain.from_iterable(itertools.combinations(range(n), r)), dtype=np.int64, count=total * r
    ).reshape(total, r)
    batches = [supports[start : start + _SVD_BATCH] for start in range(0, total, _SVD_BATCH)]
    minima = run_ordered(lambda batch: _smallest_singular_values(A_T, batch), batches, workers=workers)
    values = np.concatenate(minima)
    best = int(np.argmin(values))
    value = float(values[best])
    scale = float(np.max(np.linalg.norm(A, axis=0))) if n else 0.0
    rank_deficient = value <= np.finfo(float).eps * max(m, r) * scale
    if rank_deficient:
        value = 0.0
    return RestrictedInfimum(
        value=value,
        support=tuple(int(j) for j in supports[best]),
        rank_deficient=bool(rank_deficient),
        supports_checked=total,
    )


def column_bound(A: Any) -> float:
    """Largest column Euclidean norm."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    return float(np.max(np.linalg.norm(A, axis=0)))


def c_nu(nu: float) -> float:
    return nu * nu / (2.0 * nu + 1.0) ** 2


@dataclass
class NspCertificate:
    r: int
    m: int
    tau: float
    M: float
    nu: float
    c_nu: float
    s_max: float
    unbounded: bool
    cone_constant: float
    q_constants: dict[str, float]
    infimum: RestrictedInfimum
    min_slack: Optional[float] = None
    valid: bool = True
    validation_samples: int = 0

    @property
    def certified_tau(self) -> float:
        """NSP constant for l2: sqrt(2) * tau."""
        return self.cone_constant

    def effective_s(self, n: int) -> int:
        return n if self.unbounded else int(min(self.s_max, n))

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["s_max"] = "inf" if self.unbounded else int(self.s_max)
        out["infimum"] = asdict(self.infimum)
        return out


def _q_constants(m: int, tau: float) -> dict[str, float]:
    base = math.sqrt(2.0) * tau
    return {
        "2": base,
        "4": m ** 0.25 * base,
        "inf": math.sqrt(m) * base,
    }


def _nsq_slacks(A: np.ndarray, tau: float, r: int, ys: np.ndarray) -> np.ndarray:
    """Relative slack of ||Ay||^2 >= t||y||^2 - (||y||_1 sum_j ||Ae_j||^2 |y_j| - t||y||_1^2) / (r - 1), t = tau^-2."""
    inv_tau_sq = 1.0 / (tau * tau)
    col_sq = np.sum(A * A, axis=0)
    lhs = np.sum((ys @ A.T) ** 2, axis=1)
    l1 = np.sum(np.abs(ys), axis=1)
    l2_sq = np.sum(ys * ys, axis=1)
    rhs = inv_tau_sq * l2_sq - (l1 * (np.abs(ys) @ col_sq) - inv_tau_sq * l1 * l1) / (r - 1)
    return (lhs - rhs) / np.maximum(1.0, np.maximum(np.abs(rhs), lhs))


def lm14_certify(
    A: Any,
    r: int,
    nu: float,
    samples: int = 1000,
    seed: int = 0,
    cap: Optional[int] = None,
) -> NspCertificate:
    """Null space certificate from the restricted infimum on V_r and the column bound.

    s_max = floor(c(nu) (r - 1) / (M^2 tau^2 - 1)); a nonpositive denominator
    leaves the sparsity unconstrained and is flagged as unbounded.
    """
    A = np.asarray(A, dtype=float)
    if not 0.0 < nu < 1.0:
        raise CertificationError(f"nu must lie in (0, 1), got {nu}")
    telemetry = get_telemetry_logger()
    with telemetry.timed_operation(
        "certify", "restricted_infimum", payload={"m": A.shape[0], "n": A.shape[1], "r": r}, component="certify"
    ):
        inf = brute_force_tau(A, r, cap=cap)
    if inf.value == 0.0:
        raise CertificationError(f"restricted infimum over V_{r} is zero; no finite tau")
    tau = inf.tau
    M = column_bound(A)
    cnu = c_nu(nu)
    denom = M * M * tau * tau - 1.0
    # Rounding can push an exact zero denominator slightly positive.
    unbounded = denom <= 1e-12
    s_max = math.inf if unbounded else float(math.floor(cnu * (r - 1) / denom))
    m = A.shape[0]
    cert = NspCertificate(
        r=r,
        m=m,
        tau=tau,
        M=M,
        nu=nu,
        c_nu=cnu,
        s_max=s_max,
        unbounded=unbounded,
        cone_constant=math.sqrt(2.0) * tau,
        q_constants=_q_constants(m, tau),
        infimum=inf,
    )
    if r >= 2 and samples > 0:
        ys = np.random.default_rng(seed).standard_normal((samples, A.shape[1]))
        slacks = _nsq_slacks(A, tau, r, ys)
        cert.min_slack = float(np.min(slacks))
        cert.valid = cert.min_slack >= -SLACK_TOL
        cert.validation_samples = samples
        if not cert.valid:
            logger.error("nsp inequality violated: min slack %.3e", cert.min_slack)
    logger.info("certificate r=%d tau=%.6g M=%.6g s_max=%s", r, tau, M, "inf" if unbounded else int(s_max))
    telemetry.log_event(
        "certify",
        "nsp_certificate",
        payload={"r": r, "nu": nu, "s_max": "inf" if unbounded else int(s_max), "valid": cert.valid},
        severity="info" if cert.valid else "error",
        component="certify",
        metrics={"tau": tau, "M": M, "supports_checked": inf.supports_checked},
    )
    return cert


def sample_cone_vectors(
    n: int,
    nu: float,
    s: int,
    count: int,
    seed: int = 0,
    max_attempts: Optional[int] = None,
) -> np.ndarray:
    """Unit vectors of T_{nu,s}, drawn by rejection.

    Proposals are an s-sparse Gaussian head plus a dense Gaussian tail scaled
    log-uniformly in [1e-3, 1], so that both deep and boundary points appear.
    """
    if not 1 <= s <= n:
        raise CertificationError(f"s must lie in [1, {n}], got {s}")
    rng = np.random.default_rng(seed)
    max_attempts = max_attempts or 200 * count
    accepted: list[np.ndarray] = []
    attempts = 0
    while len(accepted) < count and attempts < max_attempts:
        attempts += 1
        head = rng.choice(n, size=s, replace=False)
        off = np.ones(n, dtype=bool)
        off[head] = False
        v = np.zeros(n)
        v[head] = rng.standard_normal(s)
        v[off] = 10.0 ** rng.uniform(-3.0, 0.0) * rng.standard_normal(n - s)
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            continue
        v /= norm
        if cone_membership(v, nu, s):
            accepted.append(v)
    if len(accepted) < count:
        logger.warning("only %d of %d cone vectors accepted after %d proposals", len(accepted), count, attempts)
    return np.asarray(accepted).reshape(len(accepted), n)


@dataclass(frozen=True)
class ConeCheckReport:
    s: int
    samples: int
    min_norm: float
    bound: float
    violations: int

    @property
    def honored(self) -> bool:
        return self.violations == 0


def cone_bound_check(A: Any, certificate: NspCertificate, samples: int = 1000, seed: int = 0) -> ConeCheckReport:
    """||Av||_2 against 1 / (sqrt(2) tau) on sampled unit vectors of the certified cone."""
    A = np.asarray(A, dtype=float)
    n = A.shape[1]
    s = certificate.effective_s(n)
    bound = 1.0 / certificate.cone_constant
    if s < 1:
        return ConeCheckReport(s=0, samples=0, min_norm=math.inf, bound=bound, violations=0)
    vectors = sample_cone_vectors(n, certificate.nu, s, samples, seed=seed)
    norms = np.linalg.norm(vectors @ A.T, axis=1)
    return ConeCheckReport(
        s=s,
        samples=int(vectors.shape[0]),
        min_norm=float(np.min(norms)) if norms.size else math.inf,
        bound=bound,
        violations=int(np.count_nonzero(norms < (1.0 - CONE_TOL) * bound)),
    )


@dataclass
class SmallBallReport:
    t_grid: list[float]
    frequencies: list[float]
    d_gamma: float
    hs_norm: float
    op_norm: float
    trials: int
    seed: int

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def small_ball_mc(
    gamma: GammaOperator | np.ndarray,
    ensemble: str | SubgaussianEnsemble,
    t_grid: Sequence[float],
    trials: int,
    seed: int = 0,
) -> SmallBallReport:
    """Empirical Pr(||Gamma xi||_2 <= t ||Gamma||_HS) for each t, plus the effective rank d_Gamma."""
    if trials < 1000:
        raise CertificationError(f"small-ball estimates need at least 1000 trials, got {trials}")
    ens = get_ensemble(ensemble)
    if isinstance(gamma, GammaOperator):
        n = gamma.n
        hs, op = gamma.hs_norm, gamma.operator_norm
        apply = gamma.apply
    else:
        G = np.asarray(gamma, dtype=float)
        n = G.shape[1]
        hs, op = float(np.linalg.norm(G, "fro")), float(np.linalg.norm(G, 2))
        apply = lambda xs: xs @ G.T  # noqa: E731
    if op == 0.0:
        raise CertificationError("Gamma is zero; small-ball probabilities are trivial")

    rng = np.random.default_rng(seed)
    norms = np.empty(trials)
    chunk = max(1, 1_000_000 // n)
    with get_telemetry_logger().timed_operation(
        "montecarlo", "small_ball", payload={"n": n, "trials": trials, "seed": seed}, component="certify"
    ):
        for start in range(0, trials, chunk):
            stop = min(start + chunk, trials)
            norms[start:stop] = np.linalg.norm(apply(ens.draw(rng, (stop - start, n))), axis=-1)
    return SmallBallReport(
        t_grid=[float(t) for t in t_grid],
        frequencies=[float(np.mean(norms <= t * hs)) for t in t_grid],
        d_gamma=(hs / op) ** 2,
        hs_norm=hs,
        op_norm=op,
        trials=trials,
        seed=seed,
    )


@dataclass
class StructureReport:
    n: int
    r: int
    sample_count: int
    seed: int
    k: int
    alpha: float
    theta: float
    quantile_levels: list[float]
    l2_quantiles: list[float]
    topk_quantiles: list[float]
    regularity_pass_rate: float
    mean_sq_norm: float
    sq_norm_stderr: float
    small_ball_t: list[float]
    small_ball_frequencies: list[float]
    rows: list[dict[str, Any]] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out.pop("rows")
        return out


def _random_sparse_unit(rng: np.random.Generator, n: int, r: int) -> np.ndarray:
    v = np.zeros(n)
    support = rng.choice(n, size=r, replace=False)
    values = rng.standard_normal(r)
    while not np.any(values):
        values = rng.standard_normal(r)
    v[support] = values / np.linalg.norm(values)
    return v


def structure_check(
    n: int,
    r: int,
    U: HadamardTypeMatrix,
    W: HadamardTypeMatrix,
    O: HadamardTypeMatrix,
    ensemble: str | SubgaussianEnsemble,
    sample_count: int,
    seed: int,
    params: Optional[SparsityParameters] = None,
    alpha: float = 0.5,
    theta: Optional[float] = None,
    t_grid: Sequence[float] = (0.25, 0.5, 0.75),
) -> StructureReport:
    """Sample Gamma_v xi over unit r-sparse v, one fresh xi each.

    Sample 0 is v = e_1. Sample k draws xi from trial_rng(seed, k) and v from
    trial_rng(seed, k, 1).
    """
    if not 1 <= r <= n / 2:
        raise CertificationError(f"r must satisfy 1 <= r <= n/2, got n={n}, r={r}")
    if sample_count < 1:
        raise CertificationError("sample_count must be >= 1")
    ens = get_ensemble(ensemble)
    if theta is None:
        theta = params.theta if params is not None else 0.5
    theta = min(1.0, max(theta, 1.0 / n))
    k = min(n, max(1, math.ceil(theta * n)))
    root_n = math.sqrt(n)

    l2 = np.empty(sample_count)
    topk = np.empty(sample_count)
    regular = np.zeros(sample_count, dtype=bool)
    rows: list[dict[str, Any]] = []
    with get_telemetry_logger().timed_operation(
        "montecarlo",
        "structure_check",
        payload={"n": n, "r": r, "samples": sample_count, "seed": seed},
        component="certify",
    ):
        for idx in range(sample_count):
            if idx == 0:
                v = np.zeros(n)
                v[0] = 1.0
            else:
                v = _random_sparse_unit(trial_rng(seed, idx, 1), n, r)
            xi = sample(ens, n, trial_rng(seed, idx))
            image = np.real_if_close(GammaOperator(U, W, O, v).apply(xi))
            l2[idx] = float(np.linalg.norm(image)) / root_n
            topk[idx] = topk_norm(np.abs(image), k) / root_n
            regular[idx] = regularity_check(np.abs(image), alpha, theta).regular if l2[idx] > 0 else False
            rows.append({
                "sample": idx,
                "support": " ".join(str(int(j) + 1) for j in np.flatnonzero(v)),
                "l2_scaled": l2[idx],
                "topk_scaled": topk[idx],
                "regular": bool(regular[idx]),
            })

    sq = l2**2
    levels = list(QUANTILE_LEVELS)
    return StructureReport(
        n=n,
        r=r,
        sample_count=sample_count,
        seed=seed,
        k=k,
        alpha=alpha,
        theta=theta,
        quantile_levels=levels,
        l2_quantiles=[float(x) for x in np.quantile(l2, levels)],
        topk_quantiles=[float(x) for x in np.quantile(topk, levels)],
        regularity_pass_rate=float(np.mean(regular)),
        mean_sq_norm=float(np.mean(sq)),
        sq_norm_stderr=float(np.std(sq, ddof=1) / math.sqrt(sample_count)) if sample_count > 1 else math.inf,
        small_ball_t=[float(t) for t in t_grid],
        small_ball_frequencies=[float(np.mean(l2 <= t)) for t in t_grid],
        rows=rows,
    )


@dataclass(frozen=True)
class SelectorSumReport:
    n: int
    delta: float
    trials: int
    frequency: float
    mean_sum: float
    bound: float


def selector_log_sum_check(n: int, delta: float, trials: int, seed: int = 0) -> SelectorSumReport:
    """Frequency of sum_j delta_j log(en/j) <= 5 delta n over Bernoulli(delta) selectors."""
    if not 0.0 < delta <= 1.0 or delta * n < 1.0:
        raise CertificationError(f"need 0 < delta <= 1 and delta * n >= 1, got n={n}, delta={delta}")
    if trials < 1:
        raise CertificationError("trials must be >= 1")
    weights = np.log(math.e * n / np.arange(1, n + 1))
    bound = 5.0 * delta * n
    rng = np.random.default_rng(seed)
    sums = np.empty(trials)
    chunk = max(1, 4_000_000 // n)
    with get_telemetry_logger().timed_operation(
        "montecarlo", "selector_log_sum", payload={"n": n, "delta": delta, "trials": trials}, component="certify"
    ):
        for start in range(0, trials, chunk):
            stop = min(start + chunk, trials)
            sums[start:stop] = (rng.random((stop - start, n)) < delta) @ weights
    return SelectorSumReport(
        n=n,
        delta=delta,
        trials=trials,
        frequency=float(np.mean(sums <= bound)),
        mean_sum=float(np.mean(sums)),
        bound=bound,
    )


def one_sparse_ratio(
    U: HadamardTypeMatrix,
    W: HadamardTypeMatrix,
    O: HadamardTypeMatrix,
    xi: np.ndarray,
    selected: np.ndarray,
    delta: float,
) -> float:
    """max_i ||P_Omega Gamma_{e_i} xi||_2 / sqrt(delta n)."""
    n = U.n
    responses = np.abs(unit_gamma_responses(U, W, O, xi))
    projected = np.sqrt(np.sum(responses[:, selected] ** 2, axis=1))
    return float(np.max(projected)) / math.sqrt(delta * n)


@dataclass
class OneSparseReport:
    n: int
    delta: float
    trials: int
    seed: int
    hypothesis_ok: bool
    ratios: np.ndarray = field(repr=False)

    @property
    def quantiles(self) -> dict[str, float]:
        return {f"{level:g}": float(np.quantile(self.ratios, level)) for level in QUANTILE_LEVELS}

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "delta": self.delta,
            "trials": self.trials,
            "seed": self.seed,
            "hypothesis_ok": self.hypothesis_ok,
            "max_ratio": float(np.max(self.ratios)),
            "quantiles": self.quantiles,
        }


def one_sparse_bound_check(
    n: int,
    delta: float,
    U: HadamardTypeMatrix,
    W: HadamardTypeMatrix,
    O: HadamardTypeMatrix,
    ensemble: str | SubgaussianEnsemble,
    trials: int,
    seed: int = 0,
    c0: Optional[float] = None,
    workers: int = 1,
    xi_sampler: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None,
) -> OneSparseReport:
    """Distribution of the max one-sparse ratio over fresh (xi, Omega) pairs."""
    if not 0.0 < delta <= 1.0:
        raise CertificationError(f"delta must lie in (0, 1], got {delta}")
    ens = get_ensemble(ensemble)
    c0 = float(get_constant_settings()["selector_c0"]) if c0 is None else c0
    hypothesis_ok = delta >= c0 * math.log(n) / n
    if not hypothesis_ok:
        logger.warning("delta=%g below c0 log(n)/n = %g; running anyway", delta, c0 * math.log(n) / n)
    draw = xi_sampler or (lambda rng, size: ens.draw(rng, size))

    def _trial(t: int) -> float:
        rng = trial_rng(seed, t)
        xi = draw(rng, n)
        selected = rng.random(n) < delta
        return one_sparse_ratio(U, W, O, xi, selected, delta)

    with get_telemetry_logger().timed_operation(
        "montecarlo",
        "one_sparse_bound",
        payload={"n": n, "delta": delta, "trials": trials, "seed": seed},
        component="certify",
    ):
        ratios = np.asarray(run_ordered(_trial, range(trials), workers=workers))
    return OneSparseReport(n=n, delta=delta, trials=trials, seed=seed, hypothesis_ok=hypothesis_ok, ratios=ratios)


@dataclass
class HeadTailSplit:
    head: np.ndarray
    tail: np.ndarray
    head_norm: float
    tail_profile: float


def decompose_head_tail(z: Any, m: int) -> HeadTailSplit:
    """Split z into its m largest-magnitude coordinates and the rest."""
    z = np.asarray(z, dtype=float)
    n = z.size
    if not 1 <= m <= n:
        raise CertificationError(f"m must lie in [1, {n}], got {m}")
    idx = np.argsort(-np.abs(z), kind="stable")[:m]
    head = np.zeros(n)
    head[idx] = z[idx]
    tail = z - head
    profile = 0.0
    mags = nonincreasing_rearrangement(tail)
    if mags.size:
        weights = np.sqrt(np.log(math.e * n / np.arange(1, n + 1)))
        profile = float(np.max(mags / weights))
    return HeadTailSplit(head=head, tail=tail, head_norm=float(np.linalg.norm(head)), tail_profile=profile)

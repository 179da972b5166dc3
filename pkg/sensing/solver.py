"""l1 minimization under an lq data constraint, by primal-dual splitting.

Solves  min ||z||_1  subject to  ||Bz - y||_q <= eta,  q in {2, inf},
with B available only through forward and adjoint products.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, fields
from typing import Any, Optional

import numpy as np
from scipy.optimize import linprog
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from config.settings import get_runtime_settings
from utils.telemetry import get_telemetry_logger

logger = logging.getLogger(__name__)

STATUS_CONVERGED = "converged"
STATUS_MAX_ITERS = "max-iters"
STATUS_DEGENERATE = "infeasible-degenerate"

NORM_MARGIN = 0.01
ZERO_ETA_SCALE = 1e-12


class SolverError(RuntimeError):
    """Raised for unusable operators, data or step sizes."""


def parse_q(q: Any) -> float:
    if isinstance(q, str):
        q = q.strip().lower()
        q = math.inf if q in ("inf", "infinity", "max") else float(q)
    q = float(q)
    if q not in (2.0, math.inf):
        raise SolverError(f"q must be 2 or inf, got {q}")
    return q


@dataclass
class SolverConfig:
    q: float = 2.0
    eta: float = 0.0
    max_iters: int = field(default_factory=lambda: int(get_runtime_settings()["max_iters"]))
    tol: float = field(default_factory=lambda: float(get_runtime_settings()["solver_tol"]))
    gap_tol: float = field(default_factory=lambda: float(get_runtime_settings()["gap_tol"]))
    sigma: Optional[float] = None
    tau_step: Optional[float] = None
    primal_weight: float = 1.0
    power_iters: int = 50
    check_every: int = 10
    refine: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        self.q = parse_q(self.q)
        if not math.isfinite(self.eta) or self.eta < 0:
            raise SolverError(f"eta must be finite and >= 0, got {self.eta}")
        if self.max_iters < 1 or self.check_every < 1 or self.power_iters < 1:
            raise SolverError("max_iters, check_every and power_iters must be positive")
        if self.primal_weight <= 0:
            raise SolverError(f"primal_weight must be > 0, got {self.primal_weight}")
        if (self.sigma is None) != (self.tau_step is None):
            raise SolverError("sigma and tau_step must be given together")

    @classmethod
    def from_mapping(cls, data: dict[str, Any]) -> "SolverConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise SolverError(f"unknown solver settings: {', '.join(unknown)}")
        return cls(**dict(data))

    def to_dict(self) -> dict[str, Any]:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["q"] = "inf" if math.isinf(self.q) else self.q
        return out


@dataclass
class RecoveryResult:
    x_sharp: np.ndarray
    iterations: int
    constraint_residual: float
    objective: float
    gap_certificate: float
    status: str
    dual: np.ndarray
    lower_bound: float
    eta: float
    operator_norm: float = 0.0
    refined: bool = False
    objective_trace: list[float] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == STATUS_CONVERGED

    def summary(self) -> dict[str, Any]:
        return {
            "status": self.status,
            "iterations": self.iterations,
            "objective": self.objective,
            "constraint_residual": self.constraint_residual,
            "gap_certificate": self.gap_certificate,
            "lower_bound": self.lower_bound,
            "eta": self.eta,
            "operator_norm": self.operator_norm,
            "refined": self.refined,
        }


def soft_threshold(x: np.ndarray, t: float) -> np.ndarray:
    """Proximal map of t * ||.||_1."""
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def project_l2_ball(u: np.ndarray, radius: float) -> np.ndarray:
    norm = float(np.linalg.norm(u))
    if norm <= radius:
        return u
    return u * (radius / norm)


def project_linf_ball(u: np.ndarray, radius: float) -> np.ndarray:
    return np.clip(u, -radius, radius)


def _lq_norm(u: np.ndarray, q: float) -> float:
    if u.size == 0:
        return 0.0
    return float(np.max(np.abs(u))) if math.isinf(q) else float(np.linalg.norm(u))


def _dual_norm(u: np.ndarray, q: float) -> float:
    return float(np.sum(np.abs(u))) if math.isinf(q) else float(np.linalg.norm(u))


def _as_operator(B: Any) -> LinearOperator:
    try:
        op = aslinearoperator(B)
    except TypeError as exc:
        raise SolverError(f"B is not usable as a linear operator: {exc}") from exc
    return op


def estimate_operator_norm(B: Any, iters: int = 50, seed: int = 0) -> float:
    """Power iteration on B*B; returns an estimate of ||B||_{2->2}."""
    op = _as_operator(B)
    n = op.shape[1]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    value = 0.0
    for _ in range(iters):
        w = op.rmatvec(op.matvec(v))
        w_norm = float(np.linalg.norm(w))
        if w_norm == 0.0:
            return 0.0
        value = w_norm
        v = w / w_norm
    return math.sqrt(value)


def dual_value(p: np.ndarray, BTp: np.ndarray, y: np.ndarray, eta: float, q: float) -> float:
    """Lower bound on the optimum from any dual vector p.

    D(p) = -<p, y> - eta ||p||_{q*} is valid once ||B* p||_inf <= 1; p is
    rescaled to the best admissible multiple, which also covers p = 0.
    """
    value = -float(np.dot(p, y)) - eta * _dual_norm(p, q)
    scale = float(np.max(np.abs(BTp))) if BTp.size else 0.0
    if value <= 0.0 or scale == 0.0:
        return 0.0
    return value / scale


def _feasibility_tol(y: np.ndarray, tol: float, q: float) -> float:
    return tol * max(1.0, _lq_norm(y, q))


def _columns(op: LinearOperator, support: np.ndarray) -> np.ndarray:
    n = op.shape[1]
    cols = np.empty((op.shape[0], support.size))
    for k, j in enumerate(support):
        e = np.zeros(n)
        e[j] = 1.0
        cols[:, k] = op.matvec(e)
    return cols


def _refine_l2(
    op: LinearOperator, y: np.ndarray, eta: float, support: np.ndarray, signs: np.ndarray
) -> Optional[tuple[np.ndarray, list[np.ndarray]]]:
    """Sign-constrained l1 minimizer on a fixed support, in closed form.

    z_S = z_LS - lam G^-1 sgn with lam set so the residual norm equals eta;
    the matching dual point is the residual scaled by 1/lam, which reduces
    to -B_S G^-1 sgn when y lies in the range of B_S.
    """
    B_S = _columns(op, support)
    z_ls, _, rank, _ = np.linalg.lstsq(B_S, y, rcond=None)
    if rank < support.size:
        return None
    r_ls = float(np.linalg.norm(B_S @ z_ls - y))
    if r_ls > eta:
        return None
    w = np.linalg.solve(B_S.T @ B_S, signs)
    p0 = -(B_S @ w)
    p0_norm = float(np.linalg.norm(p0))
    if p0_norm == 0.0:
        return None
    lam = math.sqrt(max(eta * eta - r_ls * r_ls, 0.0)) / p0_norm
    z_s = z_ls - lam * w
    if np.any(np.sign(z_s) != signs):
        return None
    z = np.zeros(op.shape[1])
    z[support] = z_s
    if lam > 0.0:
        return z, [(B_S @ z_s - y) / lam, p0]
    return z, [p0]


def _refine_linf(
    op: LinearOperator, y: np.ndarray, eta: float, support: np.ndarray, signs: np.ndarray
) -> Optional[tuple[np.ndarray, list[np.ndarray]]]:
    """Same problem for q = inf; it is a small LP over the support."""
    B_S = _columns(op, support)
    A_ub = np.vstack((B_S, -B_S))
    b_ub = np.concatenate((y + eta, eta - y))
    bounds = [(0.0, None) if sg > 0 else (None, 0.0) for sg in signs]
    res = linprog(signs, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        return None
    z = np.zeros(op.shape[1])
    z[support] = res.x
    mu = -np.asarray(res.ineqlin.marginals)
    m = y.size
    return z, [mu[:m] - mu[m:]]


@dataclass
class _Tracker:
    """Best feasible iterate and best dual bound seen so far."""

    x: np.ndarray
    objective: float = math.inf
    residual: float = math.inf
    lower: float = 0.0
    dual: Optional[np.ndarray] = None
    refined: bool = False
    trace: list[float] = field(default_factory=list)

    def offer_primal(self, x: np.ndarray, objective: float, residual: float, refined: bool = False) -> None:
        if objective < self.objective:
            self.x, self.objective, self.residual, self.refined = x.copy(), objective, residual, refined

    def offer_dual(self, p: np.ndarray, value: float) -> None:
        if value > self.lower or self.dual is None:
            self.lower = max(self.lower, value)
            self.dual = p.copy()

    @property
    def gap(self) -> float:
        return self.objective - self.lower

    def done(self, gap_tol: float) -> bool:
        return math.isfinite(self.objective) and self.gap <= gap_tol * max(1.0, self.objective)


def _result(
    tracker: _Tracker, iterations: int, status: str, eta: float, op_norm: float, m: int
) -> RecoveryResult:
    dual = tracker.dual if tracker.dual is not None else np.zeros(m)
    gap = tracker.gap if math.isfinite(tracker.objective) else math.inf
    return RecoveryResult(
        x_sharp=tracker.x,
        iterations=iterations,
        constraint_residual=tracker.residual,
        objective=tracker.objective,
        gap_certificate=gap,
        status=status,
        dual=dual,
        lower_bound=tracker.lower,
        eta=eta,
        operator_norm=op_norm,
        refined=tracker.refined,
        objective_trace=tracker.trace,
    )


def effective_eta(y: np.ndarray, eta: float) -> float:
    return eta if eta > 0 else ZERO_ETA_SCALE * float(np.linalg.norm(y))


def solve_bpdn(B: Any, y: Any, config: Optional[SolverConfig] = None, run_id: Optional[str] = None) -> RecoveryResult:
    config = config or SolverConfig()
    op = _as_operator(B)
    m, n = op.shape
    y = np.asarray(y, dtype=float).ravel()
    if y.size != m:
        raise SolverError(f"y has length {y.size}, operator has {m} rows")
    if not np.all(np.isfinite(y)):
        raise SolverError("y contains NaN or Inf entries")

    q = config.q
    telemetry = get_telemetry_logger()
    started = time.perf_counter()

    def _finish(result: RecoveryResult) -> RecoveryResult:
        logger.debug(
            "bpdn %s after %d iterations: objective=%.6g gap=%.3g",
            result.status,
            result.iterations,
            result.objective,
            result.gap_certificate,
        )
        telemetry.log_solve(
            status=result.status,
            iterations=result.iterations,
            objective=result.objective,
            gap=result.gap_certificate,
            duration_ms=(time.perf_counter() - started) * 1000,
            shape=(m, n),
            q=q,
            run_id=run_id,
        )
        return result

    if m == 0:
        tracker = _Tracker(x=np.zeros(n), objective=0.0, residual=0.0)
        return _finish(_result(tracker, 0, STATUS_DEGENERATE, config.eta, 0.0, 0))

    eta = effective_eta(y, config.eta)
    if _lq_norm(y, q) <= eta:
        tracker = _Tracker(x=np.zeros(n), objective=0.0, residual=_lq_norm(y, q) - eta, dual=np.zeros(m))
        tracker.trace.append(0.0)
        return _finish(_result(tracker, 0, STATUS_CONVERGED, eta, 0.0, m))

    op_norm = estimate_operator_norm(op, iters=config.power_iters, seed=config.seed)
    if op_norm == 0.0:
        raise SolverError("operator is zero; no step size is admissible")
    if config.sigma is not None:
        sigma, tau = float(config.sigma), float(config.tau_step)
        if sigma * tau * op_norm**2 > 1.0:
            raise SolverError(
                f"step sizes violate sigma * tau * ||B||^2 <= 1: {sigma} * {tau} * {op_norm**2:.6g}"
            )
    else:
        lipschitz = op_norm * (1.0 + NORM_MARGIN)
        tau = config.primal_weight / lipschitz
        sigma = 1.0 / (config.primal_weight * lipschitz)

    project = project_linf_ball if math.isinf(q) else project_l2_ball
    refine = _refine_linf if math.isinf(q) else _refine_l2
    feas_tol = _feasibility_tol(y, config.tol, q)

    x = np.zeros(n)
    Bx = np.zeros(m)
    x_bar, Bx_bar = x, Bx
    p = np.zeros(m)
    tracker = _Tracker(x=x.copy())
    last_residual = math.inf
    previous_support: Optional[tuple[int, ...]] = None
    tried: set[tuple[int, ...]] = set()
    status = STATUS_MAX_ITERS
    iteration = 0

    for iteration in range(1, config.max_iters + 1):
        u = p + sigma * Bx_bar
        p = u - sigma * (y + project(u / sigma - y, eta))
        BTp = op.rmatvec(p)
        x_new = soft_threshold(x - tau * BTp, tau)
        Bx_new = op.matvec(x_new)
        x_bar, Bx_bar = 2.0 * x_new - x, 2.0 * Bx_new - Bx
        x, Bx = x_new, Bx_new

        if iteration % config.check_every and iteration != config.max_iters:
            continue

        last_residual = _lq_norm(Bx - y, q) - eta
        if last_residual <= feas_tol:
            tracker.offer_primal(x, float(np.sum(np.abs(x))), last_residual)
        tracker.offer_dual(p, dual_value(p, BTp, y, eta, q))
        if math.isfinite(tracker.objective):
            tracker.trace.append(tracker.objective)
        if tracker.done(config.gap_tol):
            status = STATUS_CONVERGED
            break

        support = tuple(int(j) for j in np.flatnonzero(x))
        if (
            config.refine
            and support
            and support == previous_support
            and support not in tried
            and len(support) <= m
        ):
            tried.add(support)
            idx = np.asarray(support)
            candidate = refine(op, y, eta, idx, np.sign(x[idx]))
            if candidate is not None:
                z, duals = candidate
                residual = _lq_norm(op.matvec(z) - y, q) - eta
                if residual <= feas_tol:
                    tracker.offer_primal(z, float(np.sum(np.abs(z))), residual, refined=True)
                    for pc in duals:
                        tracker.offer_dual(pc, dual_value(pc, op.rmatvec(pc), y, eta, q))
                    tracker.trace.append(tracker.objective)
                    if tracker.done(config.gap_tol):
                        status = STATUS_CONVERGED
                        break
        previous_support = support

    if not math.isfinite(tracker.objective):
        # No iterate met the constraint; report the last one as is.
        tracker.x, tracker.objective, tracker.residual = x.copy(), float(np.sum(np.abs(x))), last_residual

    return _finish(_result(tracker, iteration, status, eta, op_norm, m))


@dataclass(frozen=True)
class GapReport:
    primal: float
    lower_bound: float
    gap: float
    constraint_residual: float
    feasible: bool
    certified: bool


def certify_optimality(
    B: Any, y: Any, config: SolverConfig, result: RecoveryResult, x: Optional[np.ndarray] = None
) -> GapReport:
    """Recompute the primal value and the dual lower bound from scratch.

    ``x`` replaces ``result.x_sharp`` when given, so a perturbed point can be
    scored against the same dual vector.
    """
    op = _as_operator(B)
    y = np.asarray(y, dtype=float).ravel()
    x = result.x_sharp if x is None else np.asarray(x, dtype=float)
    q = config.q
    eta = effective_eta(y, config.eta)
    residual = _lq_norm(op.matvec(x) - y, q) - eta
    primal = float(np.sum(np.abs(x)))
    p = np.asarray(result.dual, dtype=float)
    lower = dual_value(p, op.rmatvec(p), y, eta, q) if p.size else 0.0
    gap = primal - lower
    feasible = residual <= _feasibility_tol(y, config.tol, q)
    return GapReport(
        primal=primal,
        lower_bound=lower,
        gap=gap,
        constraint_residual=residual,
        feasible=feasible,
        certified=feasible and gap <= config.gap_tol * max(1.0, primal),
    )


def nsp_constants(nu: float, tau: float) -> tuple[float, float]:
    """C = (1 + nu)^2 / (1 - nu) and D = (3 + nu) tau / (1 - nu)."""
    if not 0.0 < nu < 1.0:
        raise SolverError(f"nu must lie in (0, 1), got {nu}")
    if tau <= 0:
        raise SolverError(f"tau must be > 0, got {tau}")
    return (1.0 + nu) ** 2 / (1.0 - nu), (3.0 + nu) / (1.0 - nu) * tau


def predicted_error_bounds(
    nu: float,
    tau: float,
    s: int,
    eta: float,
    sigma_s: float,
    m: Optional[int] = None,
    q: float = 2.0,
    normalized: bool = False,
) -> tuple[float, float]:
    """(l1, l2) reconstruction error bounds for a robust null space property.

    With ``normalized`` the given tau is read as tau' and divided by m^(1/q),
    which yields the 1/sqrt(m) scaling of the noise term for q = 2.
    """
    if s < 1:
        raise SolverError(f"s must be >= 1, got {s}")
    q = parse_q(q)
    if normalized:
        if not m or m < 1:
            raise SolverError("normalized tau needs m >= 1")
        tau = tau / (1.0 if math.isinf(q) else m ** (1.0 / q))
    C, D = nsp_constants(nu, tau)
    root_s = math.sqrt(s)
    return C * sigma_s + D * root_s * eta, C * sigma_s / root_s + D * eta

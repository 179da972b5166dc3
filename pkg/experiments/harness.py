"""Seeded recovery trials and the experiments built from them.

Every trial owns the stream ``trial_rng(master_seed, *index)``, so results do
not depend on scheduling and reruns with the same seed are bit-identical.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import fisher_exact

from config.settings import get_constant_settings
from experiments.config import ConfigError, ExperimentConfig
from sensing.analysis import best_s_term_error
from sensing.certify import CertificationError, NspCertificate, lm14_certify
from sensing.generators import get_ensemble, trial_rng
from sensing.measurement import PartialCirculantOperator, make_partial_circulant, make_selector_mask
from sensing.solver import (
    STATUS_CONVERGED,
    SolverConfig,
    nsp_constants,
    predicted_error_bounds,
    solve_bpdn,
)
from utils.formatters import write_csv
from utils.parallel import run_ordered
from utils.telemetry import get_telemetry_logger

logger = logging.getLogger(__name__)

PHASE_COLUMNS = ("n", "m", "s", "trials", "successes", "median_rel_l2", "median_rel_l1", "mean_iters", "seed")
NOISE_COLUMNS = (
    "eta",
    "trials",
    "converged",
    "median_err_l2",
    "median_err_l1",
    "predicted_l2",
    "q",
    "quantized",
)
MONOTONE_ALPHA = 0.01


@dataclass
class Instance:
    xi: np.ndarray
    B: PartialCirculantOperator
    x: np.ndarray


def draw_instance(n: int, m: int, s: int, ensemble: str, rng: np.random.Generator) -> Instance:
    """Generator, Bernoulli(m/n) mask and a unit s-sparse signal on a uniform support."""
    if not 1 <= m <= n or not 0 <= s <= n:
        raise ConfigError(f"invalid dimensions n={n}, m={m}, s={s}")
    xi = get_ensemble(ensemble).draw(rng, n)
    mask = make_selector_mask(n, m / n, int(rng.integers(2**63 - 1)))
    x = np.zeros(n)
    if s:
        support = rng.choice(n, size=s, replace=False)
        values = rng.standard_normal(s)
        x[support] = values / np.linalg.norm(values)
    return Instance(xi=xi, B=make_partial_circulant(xi, mask), x=x)


def sphere_noise(rng: np.random.Generator, m: int, eta: float, q: float) -> np.ndarray:
    """Uniform draw from the lq-sphere of radius eta (zero when eta = 0)."""
    if eta == 0.0 or m == 0:
        return np.zeros(m)
    if math.isinf(q):
        # Uniform surface measure: pick a face, fill the rest uniformly.
        e = rng.uniform(-1.0, 1.0, m)
        e[rng.integers(m)] = rng.choice((-1.0, 1.0))
        return eta * e
    g = rng.standard_normal(m)
    return eta * g / np.linalg.norm(g)


def quantize(values: np.ndarray, step: float) -> np.ndarray:
    return np.round(values / step) * step


@dataclass
class TrialRecord:
    n: int
    m: int
    m_realized: int
    s: int
    seed: int
    index: tuple[int, ...]
    status: str
    iterations: int
    success: bool
    err_l1: float
    err_l2: float
    rel_l1: float
    rel_l2: float
    gap: float
    predicted_l1: Optional[float] = None
    predicted_l2: Optional[float] = None
    certified: bool = False
    certified_s: Optional[int] = None
    certified_l1_bound: Optional[float] = None
    certified_l2_bound: Optional[float] = None
    certified_bound_respected: Optional[bool] = None

    @property
    def converged(self) -> bool:
        return self.status == STATUS_CONVERGED


def _certify_instance(
    inst: Instance, x_sharp: np.ndarray, q: float, r: int, record: TrialRecord
) -> None:
    """Exact certificate on the materialized B, then the robust null space bound.

    For any z and an NSP with constants (nu, tau_q) of order s',
    ||z - x||_2 <= C / sqrt(s') (||z||_1 - ||x||_1 + 2 sigma_s'(x)_1) + D ||B(z - x)||_q
    with C = (1 + nu)^2 / (1 - nu) and D = (3 + nu) tau_q / (1 - nu); the l1
    bound carries C and sqrt(s') D. This covers inexact minimizers too.
    """
    A = inst.B.matrix()
    r = min(r, A.shape[0], A.shape[1])
    if r < 2:
        return
    nu = float(get_constant_settings()["nsp_nu"])
    try:
        cert: NspCertificate = lm14_certify(A, r, nu, samples=0)
    except CertificationError as e:
        logger.debug("certification skipped: %s", e)
        return
    s_cert = cert.effective_s(A.shape[1])
    if s_cert < 1:
        return
    tau_q = cert.q_constants["inf"] if math.isinf(q) else cert.cone_constant
    C, D = nsp_constants(nu, tau_q)
    surplus = max(0.0, float(np.sum(np.abs(x_sharp)) - np.sum(np.abs(inst.x))))
    sigma = best_s_term_error(inst.x, s_cert)
    diff = A @ (x_sharp - inst.x)
    misfit = float(np.max(np.abs(diff))) if math.isinf(q) else float(np.linalg.norm(diff))
    head = surplus + 2.0 * sigma
    record.certified = True
    record.certified_s = s_cert
    record.certified_l1_bound = C * head + math.sqrt(s_cert) * D * misfit
    record.certified_l2_bound = C * head / math.sqrt(s_cert) + D * misfit
    slack = 1e-9 * max(1.0, record.certified_l2_bound) + 1e-12
    record.certified_bound_respected = (
        record.err_l2 <= record.certified_l2_bound + slack
        and record.err_l1 <= record.certified_l1_bound + slack * math.sqrt(s_cert)
    )


def solve_instance(
    inst: Instance,
    y: np.ndarray,
    q: float,
    eta: float,
    solver: SolverConfig,
    success_threshold: float,
    seed: int,
    index: tuple[int, ...],
    n: int,
    m: int,
    s: int,
    certify_max_n: int = 0,
    certify_r: int = 4,
) -> tuple[TrialRecord, np.ndarray]:
    cfg = replace(solver, q=q, eta=eta)
    result = solve_bpdn(inst.B, y, cfg)
    err = result.x_sharp - inst.x
    err_l1 = float(np.sum(np.abs(err)))
    err_l2 = float(np.linalg.norm(err))
    x_l1 = float(np.sum(np.abs(inst.x)))
    x_l2 = float(np.linalg.norm(inst.x))
    rel_l1 = err_l1 / x_l1 if x_l1 > 0 else err_l1
    rel_l2 = err_l2 / x_l2 if x_l2 > 0 else err_l2

    predicted_l1 = predicted_l2 = None
    if inst.B.m > 0:
        consts = get_constant_settings()
        predicted_l1, predicted_l2 = predicted_error_bounds(
            consts["nsp_nu"], consts["nsp_tau"], max(s, 1), eta, 0.0, m=inst.B.m, q=q, normalized=True
        )

    record = TrialRecord(
        n=n,
        m=m,
        m_realized=inst.B.m,
        s=s,
        seed=seed,
        index=tuple(int(i) for i in index),
        status=result.status,
        iterations=result.iterations,
        success=result.converged and rel_l2 <= success_threshold,
        err_l1=err_l1,
        err_l2=err_l2,
        rel_l1=rel_l1,
        rel_l2=rel_l2,
        gap=result.gap_certificate,
        predicted_l1=predicted_l1,
        predicted_l2=predicted_l2,
    )
    if certify_max_n and n <= certify_max_n and inst.B.m > 0:
        _certify_instance(inst, result.x_sharp, q, certify_r, record)
    return record, result.x_sharp


def run_trial(
    n: int,
    m: int,
    s: int,
    ensemble: str,
    q: float,
    eta: float,
    seed: int,
    *,
    index: Sequence[int] = (),
    solver: Optional[SolverConfig] = None,
    success_threshold: float = 1e-4,
    certify_max_n: int = 0,
    certify_r: int = 4,
    quantized: bool = False,
) -> TrialRecord:
    """One draw of (xi, Omega, x, e), one solve, one record.

    With ``quantized`` the data are y = round(Bx / (2 eta)) * 2 eta and the
    constraint is the l_inf ball of radius eta.
    """
    solver = solver or SolverConfig()
    rng = trial_rng(seed, *index)
    inst = draw_instance(n, m, s, ensemble, rng)
    clean = inst.B.matvec(inst.x)
    if quantized and eta > 0:
        q = math.inf
        y = quantize(clean, 2.0 * eta)
    else:
        y = clean + sphere_noise(rng, inst.B.m, eta, q)
    record, _ = solve_instance(
        inst, y, q, eta, solver, success_threshold, seed, tuple(index), n, m, s, certify_max_n, certify_r
    )
    get_telemetry_logger().log_trial(
        n=n,
        m=m,
        s=s,
        seed=seed,
        success=record.success,
        rel_l2=record.rel_l2,
        iterations=record.iterations,
    )
    return record


@dataclass
class PhaseCell:
    n: int
    m: int
    s: int
    trials: int
    successes: int
    median_rel_l2: float
    median_rel_l1: float
    mean_iters: float
    seed: int

    @property
    def rate(self) -> float:
        return self.successes / self.trials if self.trials else 0.0

    def row(self) -> dict[str, Any]:
        return {name: getattr(self, name) for name in PHASE_COLUMNS}


@dataclass
class PhaseDiagram:
    cells: list[PhaseCell]
    records: list[TrialRecord] = field(default_factory=list, repr=False)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([c.row() for c in self.cells], columns=list(PHASE_COLUMNS))

    def cell(self, s: int, m: int) -> PhaseCell:
        for c in self.cells:
            if c.s == s and c.m == m:
                return c
        raise KeyError((s, m))

    def write_csv(self, path: str | Path) -> pd.DataFrame:
        return write_csv(path, (c.row() for c in self.cells), PHASE_COLUMNS)


def _trial_job(config: ExperimentConfig, quantized: bool = False):
    def job(key: tuple[int, int, int]) -> TrialRecord:
        s, m, t = key
        return run_trial(
            config.n,
            m,
            s,
            config.ensemble,
            config.q,
            config.eta,
            config.master_seed,
            index=(s, m, t),
            solver=config.solver,
            success_threshold=config.success_threshold,
            certify_max_n=config.certify_max_n,
            certify_r=config.certify_r,
            quantized=quantized,
        )

    return job


def _aggregate(n: int, m: int, s: int, seed: int, records: list[TrialRecord]) -> PhaseCell:
    converged = [r for r in records if r.converged]
    return PhaseCell(
        n=n,
        m=m,
        s=s,
        trials=len(records),
        successes=sum(r.success for r in records),
        median_rel_l2=float(np.median([r.rel_l2 for r in converged])) if converged else math.nan,
        median_rel_l1=float(np.median([r.rel_l1 for r in converged])) if converged else math.nan,
        mean_iters=float(np.mean([r.iterations for r in records])) if records else math.nan,
        seed=seed,
    )


def run_phase_diagram(
    config: ExperimentConfig, output: Optional[str | Path] = None, workers: Optional[int] = None
) -> PhaseDiagram:
    """Sweep every (s, m) cell; rows are ordered by s, then m, as listed in the config."""
    workers = config.workers if workers is None else workers
    keys = [(s, m, t) for s in config.s_grid for m in config.m_grid for t in range(config.trials)]
    telemetry = get_telemetry_logger()
    with telemetry.timed_operation(
        "experiment", "phase_diagram", payload={"n": config.n, "cells": len(config.s_grid) * len(config.m_grid)}
    ):
        records = run_ordered(_trial_job(config), keys, workers=workers)

    cells: list[PhaseCell] = []
    pos = 0
    for s in config.s_grid:
        for m in config.m_grid:
            chunk = records[pos : pos + config.trials]
            pos += config.trials
            cells.append(_aggregate(config.n, m, s, config.master_seed, chunk))
    diagram = PhaseDiagram(cells=cells, records=records)
    if output is not None:
        diagram.write_csv(output)
        logger.info("phase diagram with %d cells written to %s", len(cells), output)
    return diagram


@dataclass(frozen=True)
class MonotonicityViolation:
    axis: str
    fixed: int
    lower: int
    upper: int
    p_value: float


def monotonicity_violations(diagram: PhaseDiagram, alpha: float = MONOTONE_ALPHA) -> list[MonotonicityViolation]:
    """Adjacent cells whose success rates go the wrong way with significance alpha.

    Rates should not decrease in m (fixed s) nor increase in s (fixed m);
    each adjacent pair gets a one-sided Fisher exact test.
    """
    violations: list[MonotonicityViolation] = []
    s_values = sorted({c.s for c in diagram.cells})
    m_values = sorted({c.m for c in diagram.cells})

    def _table(first: PhaseCell, second: PhaseCell) -> list[list[int]]:
        return [
            [first.successes, first.trials - first.successes],
            [second.successes, second.trials - second.successes],
        ]

    for s in s_values:
        for lo, hi in zip(m_values, m_values[1:]):
            a, b = diagram.cell(s, lo), diagram.cell(s, hi)
            _, p = fisher_exact(_table(a, b), alternative="greater")
            if p < alpha:
                violations.append(MonotonicityViolation("m", s, lo, hi, float(p)))
    for m in m_values:
        for lo, hi in zip(s_values, s_values[1:]):
            a, b = diagram.cell(lo, m), diagram.cell(hi, m)
            _, p = fisher_exact(_table(b, a), alternative="greater")
            if p < alpha:
                violations.append(MonotonicityViolation("s", m, lo, hi, float(p)))
    return violations


@dataclass
class Probe:
    m: int
    trials: int
    successes: int

    @property
    def rate(self) -> float:
        return self.successes / self.trials


@dataclass
class MinMeasurements:
    n: int
    s: int
    target_rate: float
    m_star: int
    unreachable: bool
    confirmed_rate: float
    probes: list[Probe] = field(default_factory=list)

    @property
    def normalized(self) -> float:
        """m* / (s log(en/s))."""
        if self.s == 0:
            return math.nan
        return self.m_star / (self.s * math.log(math.e * self.n / self.s))

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "s": self.s,
            "target_rate": self.target_rate,
            "m_star": self.m_star,
            "unreachable": self.unreachable,
            "confirmed_rate": self.confirmed_rate,
            "normalized": self.normalized,
            "probes": [{"m": p.m, "trials": p.trials, "successes": p.successes} for p in self.probes],
        }


def estimate_min_m(
    n: int, s: int, target_rate: float, config: ExperimentConfig, workers: Optional[int] = None
) -> MinMeasurements:
    """Bisection for the smallest m whose empirical success rate reaches the target.

    Probes run half the configured trials; the returned m* is confirmed
    with the full count. If m = n misses the target, n is returned flagged.
    """
    if not 0.0 < target_rate < 1.0:
        raise ConfigError(f"target_rate must lie in (0, 1), got {target_rate}")
    if not 0 <= s < n:
        raise ConfigError(f"s must satisfy 0 <= s < n, got s={s}, n={n}")
    workers = config.workers if workers is None else workers
    cfg = replace(config, n=n, s_grid=[s], m_grid=[n])
    job = _trial_job(cfg)
    probe_trials = max(1, config.trials // 2)
    probes: list[Probe] = []

    def probe(m: int, trials: int) -> Probe:
        records = run_ordered(job, [(s, m, t) for t in range(trials)], workers=workers)
        result = Probe(m=m, trials=trials, successes=sum(r.success for r in records))
        probes.append(result)
        logger.debug("probe m=%d rate=%.3f", m, result.rate)
        return result

    lo = config.m_min or max(1, s)
    hi = config.m_max or n
    lo = min(lo, hi)
    first = probe(lo, probe_trials)
    if first.rate >= target_rate:
        confirm = probe(lo, config.trials)
        return MinMeasurements(n, s, target_rate, lo, False, confirm.rate, probes)
    top = probe(hi, probe_trials)
    if top.rate < target_rate:
        return MinMeasurements(n, s, target_rate, hi, True, top.rate, probes)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if probe(mid, probe_trials).rate >= target_rate:
            hi = mid
        else:
            lo = mid
    confirm = probe(hi, config.trials)
    return MinMeasurements(n, s, target_rate, hi, False, confirm.rate, probes)


@dataclass
class NoiseSweep:
    n: int
    m: int
    s: int
    q: float
    quantized: bool
    rows: list[dict[str, Any]]
    slope: float
    intercept: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=list(NOISE_COLUMNS))

    def write_csv(self, path: str | Path) -> pd.DataFrame:
        return write_csv(path, self.rows, NOISE_COLUMNS)


def run_noise_sweep(
    n: int,
    m: int,
    s: int,
    eta_grid: Sequence[float],
    q: float,
    config: ExperimentConfig,
    *,
    quantized: bool = False,
    output: Optional[str | Path] = None,
    workers: Optional[int] = None,
) -> NoiseSweep:
    """Median error versus noise level on one fixed (xi, Omega, x).

    Each eta gets fresh noise per trial; quantized data are deterministic, so
    that variant runs a single trial per eta with q = inf. The slope is a
    least-squares line through the positive-eta medians.
    """
    etas = [float(e) for e in eta_grid]
    if not etas or any(e < 0 for e in etas) or not any(e > 0 for e in etas):
        raise ConfigError("eta_grid must be non-negative with at least one positive value")
    workers = config.workers if workers is None else workers
    if quantized:
        q = math.inf
    inst = draw_instance(n, m, s, config.ensemble, trial_rng(config.master_seed, 0))
    clean = inst.B.matvec(inst.x)
    trials = 1 if quantized else config.trials
    consts = get_constant_settings()

    def job(key: tuple[int, int]) -> TrialRecord:
        k, t = key
        eta = etas[k]
        if quantized and eta > 0:
            y = quantize(clean, 2.0 * eta)
        else:
            y = clean + sphere_noise(trial_rng(config.master_seed, 1, k, t), inst.B.m, eta, q)
        record, _ = solve_instance(
            inst, y, q, eta, config.solver, config.success_threshold, config.master_seed, (1, k, t), n, m, s
        )
        return record

    keys = [(k, t) for k in range(len(etas)) for t in range(trials)]
    records = run_ordered(job, keys, workers=workers)

    rows: list[dict[str, Any]] = []
    for k, eta in enumerate(etas):
        chunk = records[k * trials : (k + 1) * trials]
        predicted = None
        if inst.B.m > 0:
            _, predicted = predicted_error_bounds(
                consts["nsp_nu"], consts["nsp_tau"], max(s, 1), eta, 0.0, m=inst.B.m, q=q, normalized=True
            )
        rows.append({
            "eta": eta,
            "trials": trials,
            "converged": sum(r.converged for r in chunk),
            "median_err_l2": float(np.median([r.err_l2 for r in chunk])),
            "median_err_l1": float(np.median([r.err_l1 for r in chunk])),
            "predicted_l2": predicted,
            "q": "inf" if math.isinf(q) else q,
            "quantized": quantized,
        })

    positive = [(r["eta"], r["median_err_l2"]) for r in rows if r["eta"] > 0]
    if len(positive) >= 2:
        slope, intercept = np.polyfit([p[0] for p in positive], [p[1] for p in positive], 1)
    else:
        eta0, err0 = positive[0]
        slope, intercept = err0 / eta0, 0.0
    sweep = NoiseSweep(
        n=n, m=m, s=s, q=q, quantized=quantized, rows=rows, slope=float(slope), intercept=float(intercept)
    )
    if output is not None:
        sweep.write_csv(output)
        logger.info("noise sweep with %d levels written to %s", len(rows), output)
    return sweep

"""Seeded samplers for isotropic subgaussian vectors with independent coordinates."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import factorial2

from config.settings import get_constant_settings

logger = logging.getLogger(__name__)

ENSEMBLE_NAMES = ("gaussian", "rademacher", "uniform")
_SQRT3 = math.sqrt(3.0)


class GeneratorError(ValueError):
    """Raised for unknown ensembles and invalid sampling parameters."""


@dataclass(frozen=True)
class SubgaussianEnsemble:
    """Mean-zero, variance-one coordinate law.

    ``l_hint`` is a documented subgaussian constant for the law; it is never
    enforced.
    """

    kind: str
    l_hint: float

    def draw(self, rng: np.random.Generator, size: int | tuple[int, ...]) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.standard_normal(size)
        if self.kind == "rademacher":
            return rng.choice(np.array([-1.0, 1.0]), size=size)
        return rng.uniform(-_SQRT3, _SQRT3, size=size)

    def exact_moment(self, p: int) -> float:
        """E|xi_i|^p for even p."""
        if self.kind == "gaussian":
            return float(factorial2(p - 1, exact=True)) if p > 1 else 1.0
        if self.kind == "rademacher":
            return 1.0
        return 3.0 ** (p / 2) / (p + 1)


_ENSEMBLES = {
    "gaussian": SubgaussianEnsemble("gaussian", l_hint=1.0),
    "rademacher": SubgaussianEnsemble("rademacher", l_hint=1.0),
    "uniform": SubgaussianEnsemble("uniform", l_hint=1.0),
}


def get_ensemble(name: str | SubgaussianEnsemble) -> SubgaussianEnsemble:
    if isinstance(name, SubgaussianEnsemble):
        return name
    try:
        return _ENSEMBLES[str(name).lower()]
    except KeyError:
        raise GeneratorError(f"unknown ensemble {name!r}; expected one of {ENSEMBLE_NAMES}") from None


def trial_rng(seed: int, *index: int) -> np.random.Generator:
    """Independent stream for one trial, derived from the master seed and the trial coordinates."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *(int(i) for i in index)]))


def sample(ensemble: str | SubgaussianEnsemble, n: int, seed: int | np.random.Generator) -> np.ndarray:
    """n independent draws; the same seed reproduces the vector bit for bit."""
    ens = get_ensemble(ensemble)
    if n < 1:
        raise GeneratorError(f"n must be >= 1, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return ens.draw(rng, n)


def _random_unit_directions(rng: np.random.Generator, count: int, n: int) -> np.ndarray:
    dirs = rng.standard_normal((count, n))
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


@dataclass
class MomentReport:
    kind: str
    trials: int
    l_bound: float
    orders: list[int] = field(default_factory=list)
    empirical: list[float] = field(default_factory=list)
    exact: list[float] = field(default_factory=list)
    ratios: list[float] = field(default_factory=list)
    flagged: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.flagged

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "trials": self.trials,
            "l_bound": self.l_bound,
            "rows": [
                {"p": p, "empirical_norm": e, "exact_norm": x, "ratio": r}
                for p, e, x, r in zip(self.orders, self.empirical, self.exact, self.ratios)
            ],
            "flagged": self.flagged,
        }


def moment_growth_check(
    ensemble: str | SubgaussianEnsemble,
    p_max: int,
    trials: int,
    seed: int = 0,
    l_bound: Optional[float] = None,
) -> MomentReport:
    """Empirical (E|xi|^p)^(1/p) and its ratio to sqrt(p) for p = 2, 4, ..., p_max.

    Orders whose ratio exceeds ``l_bound`` are flagged.
    """
    ens = get_ensemble(ensemble)
    if p_max < 2 or p_max % 2 or p_max > 12:
        raise GeneratorError(f"p_max must be even and in [2, 12], got {p_max}")
    if trials < 1:
        raise GeneratorError(f"trials must be >= 1, got {trials}")
    if l_bound is None:
        l_bound = float(get_constant_settings()["moment_l_bound"])

    draws = np.abs(ens.draw(np.random.default_rng(seed), trials))
    report = MomentReport(kind=ens.kind, trials=trials, l_bound=l_bound)
    for p in range(2, p_max + 1, 2):
        empirical = float(np.mean(draws**p)) ** (1.0 / p)
        ratio = empirical / math.sqrt(p)
        report.orders.append(p)
        report.empirical.append(empirical)
        report.exact.append(ens.exact_moment(p) ** (1.0 / p))
        report.ratios.append(ratio)
        if ratio > l_bound:
            report.flagged.append(p)
    if report.flagged:
        logger.warning("moment growth above L=%s for %s at p=%s", l_bound, ens.kind, report.flagged)
    return report


@dataclass
class IsotropyReport:
    second_moments: np.ndarray
    max_deviation: float
    max_offdiag_correlation: float

    def within(self, tolerance: float) -> bool:
        return self.max_deviation <= tolerance


def isotropy_check(
    ensemble: str | SubgaussianEnsemble,
    n: int,
    directions: int,
    trials: int,
    seed: int = 0,
) -> IsotropyReport:
    """Empirical E<xi, x>^2 for random unit x (should be 1) and coordinate correlations."""
    ens = get_ensemble(ensemble)
    if n < 1 or directions < 1 or trials < 2:
        raise GeneratorError("isotropy_check needs n >= 1, directions >= 1, trials >= 2")
    rng = np.random.default_rng(seed)
    dirs = _random_unit_directions(rng, directions, n)
    draws = ens.draw(rng, (trials, n))
    moments = np.mean((draws @ dirs.T) ** 2, axis=0)

    offdiag = 0.0
    if n > 1:
        corr = np.corrcoef(draws, rowvar=False)
        offdiag = float(np.max(np.abs(corr - np.diag(np.diag(corr)))))
    return IsotropyReport(
        second_moments=moments,
        max_deviation=float(np.max(np.abs(moments - 1.0))),
        max_offdiag_correlation=offdiag,
    )


@dataclass
class TailReport:
    u_values: list[float]
    empirical: list[float]
    bounds: list[float]

    @property
    def ok(self) -> bool:
        return all(e <= b for e, b in zip(self.empirical, self.bounds))


def tail_check(
    ensemble: str | SubgaussianEnsemble,
    n: int,
    u_values: tuple[float, ...] = (2.0, 3.0),
    trials: int = 100_000,
    seed: int = 0,
) -> TailReport:
    """Empirical Pr(|<xi, x>| >= u) for one random unit x, against 2 exp(-u^2 / 4)."""
    ens = get_ensemble(ensemble)
    if n < 1 or trials < 1:
        raise GeneratorError("tail_check needs n >= 1 and trials >= 1")
    rng = np.random.default_rng(seed)
    x = _random_unit_directions(rng, 1, n)[0]
    # Chunked so that n * trials never has to fit in memory at once.
    proj = np.empty(trials)
    chunk = max(1, 2_000_000 // n)
    for start in range(0, trials, chunk):
        stop = min(start + chunk, trials)
        proj[start:stop] = ens.draw(rng, (stop - start, n)) @ x
    magnitudes = np.abs(proj)
    return TailReport(
        u_values=[float(u) for u in u_values],
        empirical=[float(np.mean(magnitudes >= u)) for u in u_values],
        bounds=[2.0 * math.exp(-(u**2) / 4.0) for u in u_values],
    )

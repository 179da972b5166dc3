import json
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from config.settings import get_runtime_settings
from sensing.generators import ENSEMBLE_NAMES
from sensing.solver import SolverConfig, SolverError, parse_q

logger = logging.getLogger(__name__)


class ConfigError(RuntimeError):
    """Raised when an experiment configuration is malformed."""


def _runtime(key: str) -> Any:
    return get_runtime_settings()[key]


@dataclass
class ExperimentConfig:
    n: int = 256
    s_grid: list[int] = field(default_factory=lambda: [5])
    m_grid: list[int] = field(default_factory=lambda: [100])
    m_min: Optional[int] = None
    m_max: Optional[int] = None
    trials: int = 20
    ensemble: str = "gaussian"
    q: float = 2.0
    eta: float = 0.0
    eta_grid: list[float] = field(default_factory=list)
    target_rate: float = 0.5
    success_threshold: float = field(default_factory=lambda: float(_runtime("success_threshold")))
    master_seed: int = field(default_factory=lambda: int(_runtime("master_seed")))
    workers: int = field(default_factory=lambda: int(_runtime("workers")))
    certify_max_n: int = field(default_factory=lambda: int(_runtime("certify_max_n")))
    certify_r: int = 4
    output: str = field(default_factory=lambda: str(Path(str(_runtime("output_dir"))) / "phase_diagram.csv"))
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self) -> None:
        if isinstance(self.solver, dict):
            try:
                self.solver = SolverConfig.from_mapping(self.solver)
            except (SolverError, TypeError) as e:
                raise ConfigError(f"invalid [solver] section: {e}") from e
        try:
            self.q = parse_q(self.q)
        except (SolverError, ValueError) as e:
            raise ConfigError(str(e)) from e
        self.validate()

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if not self.s_grid or not self.m_grid:
            raise ConfigError("s_grid and m_grid must be non-empty")
        bad_s = [s for s in self.s_grid if not 0 <= s < self.n]
        if bad_s:
            raise ConfigError(f"s_grid entries must satisfy 0 <= s < n: {bad_s}")
        bad_m = [m for m in self.m_grid if not 1 <= m <= self.n]
        if bad_m:
            raise ConfigError(f"m_grid entries must satisfy 1 <= m <= n: {bad_m}")
        for name in ("m_min", "m_max"):
            value = getattr(self, name)
            if value is not None and not 1 <= value <= self.n:
                raise ConfigError(f"{name} must lie in [1, n], got {value}")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.ensemble not in ENSEMBLE_NAMES:
            raise ConfigError(f"ensemble must be one of {ENSEMBLE_NAMES}, got {self.ensemble!r}")
        if self.eta < 0 or any(e < 0 for e in self.eta_grid):
            raise ConfigError("noise levels must be non-negative")
        if not 0.0 < self.target_rate < 1.0:
            raise ConfigError(f"target_rate must lie in (0, 1), got {self.target_rate}")
        if self.success_threshold <= 0:
            raise ConfigError("success_threshold must be > 0")

    def to_dict(self) -> dict[str, Any]:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "solver"}
        out["q"] = "inf" if self.q == float("inf") else self.q
        out["solver"] = self.solver.to_dict()
        return out


def _read_mapping(path: Path) -> dict[str, Any]:
    try:
        if path.suffix == ".toml":
            with path.open("rb") as fh:
                return tomllib.load(fh)
        if path.suffix == ".json":
            return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    raise ConfigError(f"unsupported config format {path.suffix!r}; use .toml or .json")


def build_experiment_config(data: dict[str, Any], overrides: Optional[dict[str, Any]] = None) -> ExperimentConfig:
    """Merge file values with overrides (None values are ignored) and validate."""
    merged = dict(data)
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(merged) - known)
    if unknown:
        raise ConfigError(f"unknown experiment settings: {', '.join(unknown)}")
    try:
        return ExperimentConfig(**merged)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def load_experiment_config(path: Optional[str | Path], overrides: Optional[dict[str, Any]] = None) -> ExperimentConfig:
    data = _read_mapping(Path(path)) if path else {}
    config = build_experiment_config(data, overrides)
    logger.debug("experiment config loaded from %s", path or "defaults")
    return config

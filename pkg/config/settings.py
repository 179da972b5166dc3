import os
from functools import lru_cache

from dotenv import load_dotenv

load_dotenv()


def _env_int(name: str, default: int) -> int:
    return int(os.getenv(name, str(default)))


def _env_float(name: str, default: float) -> float:
    return float(os.getenv(name, str(default)))


@lru_cache(maxsize=1)
def get_runtime_settings() -> dict[str, object]:
    """Process-wide knobs: seeds, worker pool, caps and solver budget."""
    return {
        "master_seed": _env_int("CIRCSENSE_MASTER_SEED", 20240601),
        "workers": max(1, _env_int("CIRCSENSE_WORKERS", os.cpu_count() or 1)),
        "output_dir": os.getenv("CIRCSENSE_OUTPUT_DIR", "results"),
        "materialize_cap": _env_int("CIRCSENSE_MATERIALIZE_CAP", 512),
        "naive_cap": _env_int("CIRCSENSE_NAIVE_CAP", 4096),
        "enumeration_cap": _env_int("CIRCSENSE_ENUMERATION_CAP", 1_000_000),
        "max_iters": _env_int("CIRCSENSE_MAX_ITERS", 20000),
        "solver_tol": _env_float("CIRCSENSE_SOLVER_TOL", 1e-8),
        "gap_tol": _env_float("CIRCSENSE_GAP_TOL", 1e-5),
        "success_threshold": _env_float("CIRCSENSE_SUCCESS_THRESHOLD", 1e-4),
        "certify_max_n": _env_int("CIRCSENSE_CERTIFY_MAX_N", 0),
    }


@lru_cache(maxsize=1)
def get_constant_settings() -> dict[str, float]:
    """Constants whose existence is proven but whose values are not.

    They are carried as configuration and only ever reported against.
    """
    return {
        "kappa4": _env_float("CIRCSENSE_KAPPA4", 1.0),
        "theta_c1": _env_float("CIRCSENSE_THETA_C1", 1.0),
        "theta_c2": _env_float("CIRCSENSE_THETA_C2", 1.0),
        "theta_c3": _env_float("CIRCSENSE_THETA_C3", 1.0),
        "theta_c4": _env_float("CIRCSENSE_THETA_C4", 1.0),
        "threshold_c1": _env_float("CIRCSENSE_THRESHOLD_C1", 1.0),
        "threshold_c2": _env_float("CIRCSENSE_THRESHOLD_C2", 1.0),
        "threshold_c3": _env_float("CIRCSENSE_THRESHOLD_C3", 1.0),
        "selector_c0": _env_float("CIRCSENSE_SELECTOR_C0", 1.0),
        "nsp_nu": _env_float("CIRCSENSE_NSP_NU", 0.5),
        "nsp_tau": _env_float("CIRCSENSE_NSP_TAU", 1.0),
        "moment_l_bound": _env_float("CIRCSENSE_MOMENT_L_BOUND", 1.0),
    }

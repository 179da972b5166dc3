"""Shared fixtures: isolated settings, quiet telemetry and seeded generators."""

import numpy as np
import pytest

from config.settings import get_constant_settings, get_runtime_settings
from config.telemetry_config import get_telemetry_settings
import utils.telemetry as telemetry


@pytest.fixture(autouse=True)
def isolated_settings(monkeypatch):
    """Fresh cached settings per test, with HEC shipping and the event log off."""
    for name in ("CIRCSENSE_HEC_URL", "CIRCSENSE_HEC_TOKEN", "CIRCSENSE_EVENT_LOG"):
        monkeypatch.delenv(name, raising=False)
    monkeypatch.setenv("CIRCSENSE_HEC_ENABLED", "false")
    monkeypatch.setenv("CIRCSENSE_WORKERS", "1")
    get_runtime_settings.cache_clear()
    get_constant_settings.cache_clear()
    get_telemetry_settings.cache_clear()
    monkeypatch.setattr(telemetry, "_telemetry_instance", None)
    yield
    get_runtime_settings.cache_clear()
    get_constant_settings.cache_clear()
    get_telemetry_settings.cache_clear()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def rng_seeds():
    return [0, 1, 12345]


@pytest.fixture
def certifiable_matrix():
    """20 x 12 matrix with orthogonal columns of norms linspace(1, 1.01).

    Its restricted infimum is 1 for every r and its column bound 1.01, so
    r = 4, nu = 1/2 certifies s_max = floor(0.1875 / 0.0201) = 9.
    """
    q, _ = np.linalg.qr(np.random.default_rng(7).standard_normal((20, 20)))
    return q[:, :12] * np.linspace(1.0, 1.01, 12)


@pytest.fixture
def frozen_gaussian_matrix():
    """20 x 40 standard Gaussian matrix scaled by 1/sqrt(20), seed 0."""
    return np.random.default_rng(0).standard_normal((20, 40)) / np.sqrt(20.0)

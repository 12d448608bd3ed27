"""
Global fixtures
Глобальные фикстуры
"""

import numpy as np
import pytest

from src.config import reset_settings


@pytest.fixture(autouse=True)
def isolated_settings(monkeypatch, tmp_path):
    """Every test sees default settings and writes under its own tmp dir."""
    for var in (
        "CORSS_LOG_LEVEL",
        "CORSS_JSON_LOGS",
        "CORSS_DEFAULT_BLOCK_SIZE",
        "CORSS_DEFAULT_ALGORITHM",
        "CORSS_SEED",
        "CORSS_OUTPUT_DIR",
    ):
        monkeypatch.delenv(var, raising=False)
    monkeypatch.chdir(tmp_path)
    reset_settings()
    yield
    reset_settings()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def laplacian():
    """Factory for unit-variance Laplacian sources (n_sources, n_samples)."""

    def make(rng, n_sources, n_samples):
        return rng.laplace(0.0, 1.0 / np.sqrt(2.0), size=(n_sources, n_samples))

    return make

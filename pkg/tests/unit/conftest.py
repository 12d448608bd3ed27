"""
Shared fixtures for unit tests
Общие фикстуры для юнит-тестов
"""

import pytest

from src.synth import SynthSpec, generate


@pytest.fixture(scope="session")
def mu_recording():
    """Short motor-unit recording: 8 channels, 4 sources, 4 s at 2 kHz."""
    spec = SynthSpec(n_ch=8, n_sources=4, duration_s=4.0, sample_rate=2000.0, seed=3)
    return generate(spec)


@pytest.fixture(scope="session")
def emgdi_recording():
    """Short diaphragm recording: 4 channels, 2 sources, 30 s at 1 kHz."""
    spec = SynthSpec.default_emgdi(n_ch=4, duration_s=30.0, seed=5)
    return generate(spec)

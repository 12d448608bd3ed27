"""
Shared fixtures for end-to-end tests
Общие фикстуры для e2e тестов
"""

import pytest

from src.cli import main


@pytest.fixture
def semg_signal(tmp_path):
    """Small sEMG recording written through the CLI; returns the .sig path."""
    path = tmp_path / "mu.sig"
    code = main([
        "synth", "--task", "semg", "--channels", "8", "--sources", "4",
        "--duration", "4", "--rate", "2000", "--seed", "3", "--out", str(path),
    ])
    assert code == 0
    return path


@pytest.fixture
def emgdi_signal(tmp_path):
    path = tmp_path / "emgdi.sig"
    code = main([
        "synth", "--task", "emgdi", "--channels", "4", "--duration", "30",
        "--seed", "5", "--out", str(path),
    ])
    assert code == 0
    return path

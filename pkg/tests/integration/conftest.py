# ABOUTME: Shared pytest fixtures for integration tests
# ABOUTME: Locates the shipped run configs and gives each test its own output directory

"""Shared pytest fixtures for the integration suite.

Integration tests train real models on the shipped configs and take minutes,
so they are deselected by default; run them with ``pytest -m integration``.
"""

from __future__ import annotations

from pathlib import Path

import pytest

CONFIGS_DIR = Path(__file__).resolve().parents[2] / "configs"


@pytest.fixture(scope="session")
def configs_dir() -> Path:
    """Directory holding the shipped run configs."""
    if not CONFIGS_DIR.is_dir():
        pytest.skip(f"shipped configs not found at {CONFIGS_DIR}")
    return CONFIGS_DIR


@pytest.fixture
def run_out(tmp_path: Path) -> Path:
    """Fresh output directory for one run."""
    return tmp_path / "run"

# ABOUTME: Pytest fixtures shared by unit and integration tests
# ABOUTME: Provides tiny model specs, seeded models and run-config file writers

from collections.abc import Callable
from pathlib import Path
from typing import Any

import numpy as np
import pytest
import structlog

from qlrnn.config import ModelSpec
from qlrnn.network import Model, init_model
from qlrnn.utils.logging import set_run_id


@pytest.fixture(autouse=True)
def reset_logging() -> None:
    """Start every test with default structlog config and no run id."""
    structlog.reset_defaults()
    set_run_id("")


@pytest.fixture
def tiny_spec() -> Callable[..., ModelSpec]:
    """Factory for small specs that keep finite-difference checks cheap."""

    def make(**overrides: Any) -> ModelSpec:
        values: dict[str, Any] = {
            "arch": "ql_full",
            "d_emb": 2,
            "d_h": 3,
            "leap_interval": 3,
            "vocab_size": 5,
            "n_classes": 2,
            "dropout": 0.0,
        }
        values.update(overrides)
        if values["arch"] == "bilstm":
            for key in ("leap_interval", "pooling", "skip_variant", "flush_partial"):
                values.pop(key, None)
        return ModelSpec(**values)

    return make


@pytest.fixture
def tiny_model(tiny_spec: Callable[..., ModelSpec]) -> Callable[..., Model]:
    """Factory for seeded models whose biases are randomized too."""

    def make(seed: int = 0, **overrides: Any) -> Model:
        model = init_model(tiny_spec(**overrides), seed)
        rng = np.random.default_rng(seed + 1000)
        updates = {
            name: rng.uniform(-0.5, 0.5, t.shape)
            for name, t in model.tensors.items()
            if name.rsplit(".", 1)[-1].startswith("b")
        }
        return model.with_tensors(updates)

    return make


@pytest.fixture
def write_config(tmp_path: Path) -> Callable[..., Path]:
    """Write a flat key = value run file and return its path."""

    def write(name: str = "run.cfg", **values: Any) -> Path:
        path = tmp_path / name
        lines = [f"{key} = {value}" for key, value in values.items()]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    return write


@pytest.fixture
def toy_run_values() -> dict[str, Any]:
    """A distant-token run small enough to train in a second or two."""
    return {
        "arch": "ql_full",
        "d_emb": 3,
        "d_h": 4,
        "leap_interval": 3,
        "vocab_size": 257,
        "dropout": 0.1,
        "lr": 0.01,
        "batch_size": 8,
        "max_len": 12,
        "epochs": 2,
        "seed": 3,
        "synthetic": "distant_token",
        "n_examples": 40,
        "seq_len": 12,
        "gap": 6,
    }

# ABOUTME: Self-describing JSON checkpoints: spec, init record, metadata and every tensor
# ABOUTME: Floats are written with shortest round-trip repr so loading restores tensors bit for bit

"""Checkpoint documents.

Layout::

    {
      "format": "qlrnn-checkpoint",
      "version": 1,
      "spec": {...ModelSpec fields...},
      "init": {"scheme": "uniform", "seed": 0, "forget_bias": 0.0},
      "meta": {"best_epoch": 3, ...},
      "tensors": [{"name": "embedding", "shape": [257, 32], "data": [...]}, ...]
    }

Tensor data is row-major. Tensor order is the model's fixed tensor order.
"""

from __future__ import annotations

import json
import math
from typing import TYPE_CHECKING, Any, Literal

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from qlrnn.config import SKIP_KEYS, ModelSpec
from qlrnn.errors import DataError, NumericError, QlrnnError
from qlrnn.network import InitRecord, Model
from qlrnn.numerics import FLOAT

if TYPE_CHECKING:
    from pathlib import Path

logger = structlog.get_logger(__name__)

FORMAT = "qlrnn-checkpoint"
VERSION = 1


class TensorEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    shape: tuple[int, int]
    data: list[float]


class InitEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scheme: str
    seed: int | None = None
    forget_bias: float = 0.0


class CheckpointDocument(BaseModel):
    """Schema of a checkpoint file."""

    model_config = ConfigDict(extra="forbid")

    format: Literal["qlrnn-checkpoint"] = FORMAT
    version: Literal[1] = VERSION
    spec: dict[str, Any]
    init: InitEntry
    meta: dict[str, Any] = Field(default_factory=dict)
    tensors: list[TensorEntry]


def _spec_fields(spec: ModelSpec) -> dict[str, Any]:
    fields = spec.model_dump()
    if spec.arch == "bilstm":
        for key in SKIP_KEYS:
            fields.pop(key, None)
    return fields


def checkpoint_text(model: Model, meta: dict[str, Any] | None = None) -> str:
    """Serialize a model to checkpoint JSON text."""
    for name, t in model.tensors.items():
        if not np.all(np.isfinite(t)):
            raise NumericError("refusing to checkpoint non-finite tensor", name)
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "spec": _spec_fields(model.spec),
        "init": {
            "scheme": model.init.scheme,
            "seed": model.init.seed,
            "forget_bias": model.init.forget_bias,
        },
        "meta": meta or {},
        "tensors": [
            {"name": name, "shape": list(t.shape), "data": [float(v) for v in t.reshape(-1)]}
            for name, t in model.tensors.items()
        ],
    }
    return json.dumps(doc, allow_nan=False, separators=(",", ":")) + "\n"


def save_checkpoint(path: Path, model: Model, meta: dict[str, Any] | None = None) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(checkpoint_text(model, meta), encoding="utf-8")
    logger.info("checkpoint written", path=str(path), arch=model.spec.arch)


def parse_checkpoint(text: str, source: str = "<checkpoint>") -> tuple[Model, dict[str, Any]]:
    """Rebuild (model, meta) from checkpoint JSON text."""
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise DataError(f"{source}: checkpoint is not valid JSON", e.msg) from e
    try:
        doc = CheckpointDocument.model_validate(payload)
        spec = ModelSpec.model_validate(doc.spec)
    except ValidationError as e:
        raise DataError(f"{source}: malformed checkpoint", str(e.errors()[0]["msg"])) from e

    tensors: dict[str, np.ndarray] = {}
    for entry in doc.tensors:
        rows, cols = entry.shape
        if len(entry.data) != rows * cols:
            raise DataError(
                f"{source}: tensor {entry.name} data length mismatch",
                f"shape {entry.shape} needs {rows * cols} values, got {len(entry.data)}",
            )
        if not all(math.isfinite(v) for v in entry.data):
            raise DataError(f"{source}: tensor {entry.name} has non-finite values")
        if entry.name in tensors:
            raise DataError(f"{source}: duplicate tensor", entry.name)
        tensors[entry.name] = np.array(entry.data, dtype=FLOAT).reshape(rows, cols)

    init = InitRecord(
        scheme=doc.init.scheme, seed=doc.init.seed, forget_bias=doc.init.forget_bias
    )
    try:
        model = Model(spec, tensors, init)
    except QlrnnError as e:
        raise DataError(f"{source}: checkpoint tensors do not fit its spec", str(e)) from e
    return model, doc.meta


def load_checkpoint(path: Path) -> tuple[Model, dict[str, Any]]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}", str(e)) from e
    return parse_checkpoint(text, source=str(path))

# ABOUTME: Gradient-flow profiling: how far loss and state gradients reach back in time
# ABOUTME: Jacobian norms come from one replicated backward pass, optionally checked by differences

"""Gradient-flow profiles.

For a sequence of length T and every step t the profile reports

* ``norm``: ||dc_T / dc_t||_F divided by its value at distance 0, where c
  is the carried cell state (h for the GRU, the forward direction for the
  BiLSTM);
* ``loss_grad``: ||dLoss / dx_t|| for the embedded input at step t.

The Jacobian is obtained by replicating the sequence into d_h columns and
seeding the final state gradient with the identity, so a single backward
pass yields every row at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np
import structlog

from qlrnn.errors import ConfigError
from qlrnn.network import Model, backward, batch_targets, forward
from qlrnn.numerics import FLOAT, Matrix
from qlrnn.training import cross_entropy

logger = structlog.get_logger(__name__)

FD_MAX_HIDDEN = 16
FD_MAX_LEN = 64
FD_STEP = 1e-5


@dataclass(frozen=True, slots=True)
class FlowRow:
    distance: int
    norm: float
    loss_grad: float
    analytic: float | None = None
    fd_norm: float | None = None


@dataclass(frozen=True, slots=True)
class GradFlowProfile:
    """Rows ordered by increasing distance from the final step."""

    rows: tuple[FlowRow, ...]
    raw_norms: tuple[float, ...]

    def norm_at(self, distance: int) -> float:
        return self.rows[distance].norm

    def to_csv(self, with_loss: bool = False) -> str:
        """Header ``distance,norm`` plus analytic, fd_norm and loss_grad columns when present."""
        has_analytic = any(r.analytic is not None for r in self.rows)
        has_fd = any(r.fd_norm is not None for r in self.rows)
        header = ["distance", "norm"]
        if has_analytic:
            header.append("analytic")
        if has_fd:
            header.append("fd_norm")
        if with_loss:
            header.append("loss_grad")
        lines = [",".join(header)]
        for r in self.rows:
            cells = [str(r.distance), repr(r.norm)]
            if has_analytic:
                cells.append(repr(r.analytic))
            if has_fd:
                cells.append(repr(r.fd_norm))
            if with_loss:
                cells.append(repr(r.loss_grad))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def _replicate(tokens: np.ndarray, copies: int) -> np.ndarray:
    return np.repeat(tokens[None, :], copies, axis=0)


def state_jacobian_norms(model: Model, tokens: Any) -> list[float]:
    """||dc_T / dc_t||_F for every step t of one sequence."""
    ids = np.asarray(tokens, dtype=np.int64).reshape(-1)
    n = model.spec.d_h
    logits, cache = forward(model, _replicate(ids, n))
    trace: dict[int, Matrix] = {}
    backward(model, cache, np.zeros_like(logits), seed_state=np.eye(n, dtype=FLOAT), trace=trace)
    return [float(np.linalg.norm(trace[t])) for t in range(ids.shape[0])]


def fd_jacobian_norms(model: Model, tokens: Any, h: float = FD_STEP) -> list[float]:
    """Central-difference ||dc_T / dc_t||_F, perturbing the carried state after step t."""
    ids = np.asarray(tokens, dtype=np.int64).reshape(-1)
    n = model.spec.d_h
    if n > FD_MAX_HIDDEN or ids.shape[0] > FD_MAX_LEN:
        raise ConfigError(
            "finite-difference gradient flow needs small dimensions",
            f"d_h={n} (max {FD_MAX_HIDDEN}), L={ids.shape[0]} (max {FD_MAX_LEN})",
        )
    batch = _replicate(ids, 2 * n)
    delta = np.zeros((n, 2 * n), dtype=FLOAT)
    for i in range(n):
        delta[i, 2 * i] = h
        delta[i, 2 * i + 1] = -h
    norms = []
    for t in range(ids.shape[0]):
        _, cache = forward(model, batch, perturb=(t, delta))
        final = cache.runs[0].final_state
        jac = (final[:, 0::2] - final[:, 1::2]) / (2.0 * h)
        norms.append(float(np.linalg.norm(jac)))
    return norms


def loss_input_norms(model: Model, tokens: Any, label: int | None = None) -> list[float]:
    """||dLoss / dx_t|| for every step of one sequence in eval mode."""
    ids = np.asarray(tokens, dtype=np.int64).reshape(-1)
    logits, cache = forward(model, ids)
    targets, mask = batch_targets(model.spec, ids, None, None if label is None else [label])
    _, dlogits = cross_entropy(logits, targets, mask)
    grads = backward(model, cache, dlogits)
    return [float(np.linalg.norm(grads.inputs[t])) for t in range(ids.shape[0])]


def gradient_flow_profile(
    model: Model,
    tokens: Any,
    label: int | None = None,
    *,
    clamp_forget: float | None = None,
    with_fd: bool = False,
    loss_model: Model | None = None,
) -> GradFlowProfile:
    """Gradient norms indexed by distance from the last step.

    Args:
        model: Model whose recurrence is measured.
        tokens: One token sequence.
        label: Class label for classification models.
        clamp_forget: Forget value of a clamped model; adds the f**distance column.
        with_fd: Add the finite-difference Jacobian column.
        loss_model: Model the loss gradients are taken on, when it differs from
            the Jacobian model; see ``network.with_input_path``.
    """
    ids = np.asarray(tokens, dtype=np.int64).reshape(-1)
    L = ids.shape[0]
    if model.spec.task == "classify" and label is None:
        raise ConfigError("classification gradient flow needs a label")
    jac = state_jacobian_norms(model, ids)
    fd = fd_jacobian_norms(model, ids) if with_fd else None
    loss = loss_input_norms(loss_model if loss_model is not None else model, ids, label)
    base = jac[L - 1]
    fd_base = fd[L - 1] if fd is not None else 1.0
    rows = []
    for distance in range(L):
        t = L - 1 - distance
        analytic = None
        if clamp_forget is not None:
            analytic = 1.0 if clamp_forget >= 1.0 else clamp_forget**distance
        rows.append(
            FlowRow(
                distance=distance,
                norm=jac[t] / base if base > 0.0 else 0.0,
                loss_grad=loss[t],
                analytic=analytic,
                fd_norm=None if fd is None else (fd[t] / fd_base if fd_base > 0.0 else 0.0),
            )
        )
    logger.debug(
        "gradient flow profiled",
        arch=model.spec.arch,
        length=L,
        tail_norm=rows[-1].norm if rows else math.nan,
    )
    return GradFlowProfile(rows=tuple(rows), raw_norms=tuple(jac[::-1]))

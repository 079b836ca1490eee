# ABOUTME: Whole-model assembly: embedding, one recurrent layer, dropout and a task head
# ABOUTME: Batched full-sequence forward, analytic BPTT backward, parameter counting and model size

"""Model construction, forward and backward passes.

A batch of B sequences runs as B columns of every recurrent matrix.
Sequences shorter than the batch width are right-padded; padded steps are
still computed but never reach the readout, the loss or any gradient.
Block boundaries sit at the same absolute steps for every column.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Literal

import numpy as np
import structlog

from qlrnn.cells import (
    GateParams,
    GruParams,
    LstmParams,
    PsugParams,
    QLState,
    SkipParams,
    cell_tensor_shapes,
    closed_form_cell_params,
    gated_step,
    gated_step_backward,
    gru_step,
    gru_step_backward,
    ql_carry_backward,
    ql_step_carry,
    ql_step_summary,
    ql_summary_backward,
)
from qlrnn.errors import ConfigError, DataError, ShapeError
from qlrnn.numerics import FLOAT, IntArray, Matrix, Rng, logit, matmul, row_sum, sequential_sum

if TYPE_CHECKING:
    from qlrnn.config import ModelSpec

logger = structlog.get_logger(__name__)

Mode = Literal["train", "eval"]

INIT_STREAM = 1
DROPOUT_STREAM = 2
INPUT_PATH_STREAM = 3
SATURATE = 50.0


# =============================================================================
# Model container
# =============================================================================


@dataclass(frozen=True, slots=True)
class InitRecord:
    """How a model's tensors were initialized; stored in checkpoints."""

    scheme: str
    seed: int | None = None
    forget_bias: float = 0.0


@dataclass(frozen=True)
class Model:
    """Immutable model: spec, named tensors in a fixed order, init record."""

    spec: ModelSpec
    tensors: dict[str, Matrix]
    init: InitRecord = field(default_factory=lambda: InitRecord(scheme="zeros"))

    def __post_init__(self) -> None:
        expected = model_tensor_shapes(self.spec)
        if list(self.tensors) != list(expected):
            missing = sorted(set(expected) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected))
            raise ShapeError(
                "model tensors do not match spec", f"missing={missing} unexpected={extra}"
            )
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ShapeError(
                    f"tensor {name} has wrong shape",
                    f"expected {shape}, got {self.tensors[name].shape}",
                )

    def with_tensors(self, updates: dict[str, Matrix]) -> Model:
        """Copy of this model with some tensors replaced."""
        tensors = dict(self.tensors)
        for name, value in updates.items():
            if name not in tensors:
                raise ShapeError("unknown tensor", name)
            tensors[name] = np.asarray(value, dtype=FLOAT)
        return Model(self.spec, tensors, self.init)


@dataclass(frozen=True, slots=True)
class Gradients:
    """Parameter gradients by tensor name plus gradients on embedded inputs (L, d_emb, B)."""

    tensors: dict[str, Matrix]
    inputs: np.ndarray


def model_tensor_shapes(spec: ModelSpec) -> dict[str, tuple[int, int]]:
    """Every tensor of the model in checkpoint order."""
    shapes: dict[str, tuple[int, int]] = {"embedding": (spec.vocab_size, spec.d_emb)}
    shapes.update(cell_tensor_shapes(spec))
    shapes["head.W"] = (spec.h_out, spec.n_out)
    shapes["head.b"] = (spec.n_out, 1)
    return shapes


def _is_bias(name: str) -> bool:
    local = name.rsplit(".", 1)[-1]
    return local == "b" or local.startswith("b_")


def init_model(spec: ModelSpec, seed: int, forget_bias: float = 0.0) -> Model:
    """Uniform(-1/sqrt(d_h), 1/sqrt(d_h)) weights, zero biases, optional forget-gate offset."""
    rng = Rng(seed, INIT_STREAM)
    bound = 1.0 / math.sqrt(spec.d_h)
    tensors: dict[str, Matrix] = {}
    for index, (name, shape) in enumerate(model_tensor_shapes(spec).items()):
        if _is_bias(name):
            tensors[name] = np.zeros(shape, dtype=FLOAT)
        else:
            tensors[name] = rng.derive(index).uniform(-bound, bound, shape)
    if forget_bias:
        for name in _forget_bias_targets(spec):
            local = name.rsplit(".", 1)[1]
            if local == "b":
                tensors[name][spec.d_h : 2 * spec.d_h] += forget_bias
            else:
                tensors[name] += forget_bias
    logger.debug("model initialized", arch=spec.arch, seed=seed, forget_bias=forget_bias)
    return Model(spec, tensors, InitRecord(scheme="uniform", seed=seed, forget_bias=forget_bias))


def _forget_bias_targets(spec: ModelSpec) -> list[str]:
    if spec.arch == "gru":
        return []
    if spec.arch == "bilstm":
        return ["fwd.b_f", "bwd.b_f"]
    if spec.shared_gates:
        return ["cell.b"]
    return ["cell.b_f"]


def zero_model(spec: ModelSpec) -> Model:
    tensors = {name: np.zeros(shape, dtype=FLOAT) for name, shape in model_tensor_shapes(spec).items()}
    return Model(spec, tensors, InitRecord(scheme="zeros"))


def clamped_forget_model(spec: ModelSpec, forget: float) -> Model:
    """Zero weights with the forget path pinned to a constant value.

    The input gate is shut with a -50 bias so c_t = forget * c_{t-1}; a
    forget value of 1.0 uses a +50 bias (saturated carousel). For the GRU
    the update gate is pinned so (1 - z) equals ``forget``. Summary
    projections are set to the identity on the mean half of the pool.
    """
    if not 0.0 < forget <= 1.0:
        raise ConfigError("clamped forget value must lie in (0, 1]", f"forget={forget}")
    f_bias = SATURATE if forget >= 1.0 else logit(forget)
    model = zero_model(spec)
    t = {name: value.copy() for name, value in model.tensors.items()}
    n = spec.d_h
    if spec.arch == "gru":
        t["cell.b_z"][:] = -SATURATE if forget >= 1.0 else logit(1.0 - forget)
    elif spec.shared_gates:
        t["cell.b"][:n] = -SATURATE
        t["cell.b"][n : 2 * n] = f_bias
    else:
        for prefix in ("fwd", "bwd") if spec.arch == "bilstm" else ("cell",):
            t[f"{prefix}.b_i"][:] = -SATURATE
            t[f"{prefix}.b_f"][:] = f_bias
    if spec.uses_summary:
        t["skip.W_p"][:, :n] = np.eye(n, dtype=FLOAT)
    return Model(spec, t, InitRecord(scheme=f"clamped_forget={forget!r}"))


def with_input_path(model: Model, seed: int, scale: float = 0.1) -> Model:
    """Copy of a clamped model whose inputs reach the cell state.

    The embedding is drawn from U(-1, 1); the candidate input weights and the
    head weights from U(-scale, scale). The input gate opens to 0.5. Forget,
    output and recurrent weights are untouched, so the state recurrence
    keeps its pinned decay.
    """
    spec = model.spec
    n = spec.d_h
    rng = Rng(seed, INPUT_PATH_STREAM)
    t = {name: value.copy() for name, value in model.tensors.items()}
    t["embedding"] = rng.derive(0).uniform(-1.0, 1.0, t["embedding"].shape)
    t["head.W"] = rng.derive(1).uniform(-scale, scale, t["head.W"].shape)
    if spec.arch == "gru":
        t["cell.W_h"] = rng.derive(2).uniform(-scale, scale, t["cell.W_h"].shape)
    elif spec.shared_gates:
        t["cell.W"][3 * n :] = rng.derive(2).uniform(-scale, scale, (n, spec.d_emb))
        t["cell.b"][:n] = 0.0
    else:
        prefixes = ("fwd", "bwd") if spec.arch == "bilstm" else ("cell",)
        for index, prefix in enumerate(prefixes, start=2):
            t[f"{prefix}.W_g"] = rng.derive(index).uniform(-scale, scale, (n, spec.d_emb))
            t[f"{prefix}.b_i"][:] = 0.0
    return Model(spec, t, InitRecord(scheme=f"{model.init.scheme}+input_path", seed=seed))


# =============================================================================
# Parameter accounting
# =============================================================================


def count_spec_params(spec: ModelSpec) -> int:
    """Enumerated scalar count from tensor shapes, without allocating the model."""
    return sum(r * c for r, c in model_tensor_shapes(spec).values())


def closed_form_params(spec: ModelSpec) -> int:
    return (
        spec.vocab_size * spec.d_emb
        + closed_form_cell_params(spec)
        + spec.h_out * spec.n_out
        + spec.n_out
    )


def count_params(model: Model) -> int:
    """Sum of every weight and bias scalar."""
    return sum(int(t.size) for t in model.tensors.values())


def model_size_mb(count: int, bytes_per_param: int = 4) -> float:
    """Storage size in MB (1024**2 bytes) at ``bytes_per_param`` bytes per scalar."""
    if bytes_per_param not in (4, 8):
        raise ConfigError("bytes_per_param must be 4 or 8", f"got {bytes_per_param}")
    return bytes_per_param * count / (1024.0 * 1024.0)


# =============================================================================
# Recurrent layer over a padded batch
# =============================================================================


@dataclass(frozen=True, slots=True)
class RecurrentRun:
    """One direction of the recurrent layer: emitted h per step and step caches."""

    prefix: str
    hs: np.ndarray
    caches: list[Any]
    final_state: Matrix


def _gate_params(model: Model, prefix: str) -> GateParams:
    if model.spec.shared_gates:
        return PsugParams.from_tensors(model.tensors, prefix)
    return LstmParams.from_tensors(model.tensors, prefix)


def _run_recurrent(
    model: Model,
    prefix: str,
    xs: np.ndarray,
    lengths: IntArray,
    perturb: tuple[int, Matrix] | None = None,
) -> RecurrentRun:
    """Run one direction over xs (L, d_x, B).

    ``perturb = (t, delta)`` adds delta to the carried state (c, or h for
    the GRU) right after step t; it exists for finite-difference checks.
    """
    spec = model.spec
    L, _, B = xs.shape
    n = spec.d_h
    hs = np.empty((L, n, B), dtype=FLOAT)
    caches: list[Any] = []

    if spec.arch == "gru":
        gp = GruParams.from_tensors(model.tensors, prefix)
        h = np.zeros((n, B), dtype=FLOAT)
        for t in range(L):
            h, cache = gru_step(gp, xs[t], h)
            if perturb is not None and perturb[0] == t:
                h = h + perturb[1]
            hs[t] = h
            caches.append(cache)
        return RecurrentRun(prefix, hs, caches, h)

    params = _gate_params(model, prefix)
    if spec.has_skip:
        skip = SkipParams.from_tensors(model.tensors, "skip") if spec.uses_summary else None
        st = QLState.initial(n, B)
        for t in range(L):
            if skip is not None:
                flush = None
                if spec.flush_partial:
                    flush = (lengths == t + 1).astype(FLOAT)[None, :]
                h, st, qcache = ql_step_summary(
                    params, skip, st, xs[t], spec.leap_interval, spec.pooling, flush=flush
                )
            else:
                h, st, qcache = ql_step_carry(params, st, xs[t], spec.leap_interval)
            if perturb is not None and perturb[0] == t:
                st = dataclasses.replace(st, c=st.c + perturb[1])
            hs[t] = h
            caches.append(qcache)
        return RecurrentRun(prefix, hs, caches, st.c)

    h = np.zeros((n, B), dtype=FLOAT)
    c = np.zeros((n, B), dtype=FLOAT)
    for t in range(L):
        h, c, gcache = gated_step(params, xs[t], h, c)
        if perturb is not None and perturb[0] == t:
            c = c + perturb[1]
        hs[t] = h
        caches.append(gcache)
    return RecurrentRun(prefix, hs, caches, c)


def _add_into(total: dict[str, Matrix], local: dict[str, Matrix], prefix: str) -> None:
    for name, g in local.items():
        key = f"{prefix}.{name}"
        total[key] = total[key] + g if key in total else g


def _recurrent_backward(
    model: Model,
    run: RecurrentRun,
    dhs: np.ndarray,
    grads: dict[str, Matrix],
    *,
    seed_state: Matrix | None = None,
    trace: dict[int, Matrix] | None = None,
) -> np.ndarray:
    """BPTT over one direction; returns gradients on its inputs (L, d_x, B).

    ``seed_state`` is an extra gradient on the final carried state and
    ``trace`` collects the total gradient reaching the carried state after
    every step.
    """
    spec = model.spec
    L, n, B = dhs.shape
    prefix = run.prefix
    dxs: np.ndarray | None = None
    zeros = np.zeros((n, B), dtype=FLOAT)
    dh_next = zeros
    dc_next = zeros if seed_state is None else np.asarray(seed_state, dtype=FLOAT)
    dcl_next = zeros

    if spec.arch == "gru":
        gp = GruParams.from_tensors(model.tensors, prefix)
        dh_next = dc_next
        for t in range(L - 1, -1, -1):
            dh = dhs[t] + dh_next
            if trace is not None:
                trace[t] = dh
            dx, dh_next, local = gru_step_backward(gp, run.caches[t], dh)
            _add_into(grads, local, prefix)
            if dxs is None:
                dxs = np.zeros((L, *dx.shape), dtype=FLOAT)
            dxs[t] = dx
        assert dxs is not None
        return dxs

    params = _gate_params(model, prefix)
    skip = SkipParams.from_tensors(model.tensors, "skip") if spec.uses_summary else None
    pending: dict[int, Matrix] = {}
    for t in range(L - 1, -1, -1):
        dh = dhs[t] + dh_next
        dc = dc_next
        if trace is not None:
            trace[t] = dc
        cache = run.caches[t]
        if not spec.has_skip:
            dx, dh_next, dc_next, local = gated_step_backward(params, cache, dh, dc)
        elif skip is not None:
            dh_buffer = pending.pop(t, zeros)
            dx, dh_next, dc_next, local, skip_local, dstack = ql_summary_backward(
                params, skip, cache, dh, dc, dh_buffer
            )
            _add_into(grads, skip_local, "skip")
            if dstack is not None:
                start = t - (dstack.shape[0] - 1)
                for j in range(dstack.shape[0] - 1):
                    step = start + j
                    pending[step] = pending[step] + dstack[j] if step in pending else dstack[j]
        else:
            dx, dh_next, dc_next, dcl_next, local = ql_carry_backward(
                params, cache, dh, dc, dcl_next
            )
        _add_into(grads, local, prefix)
        if dxs is None:
            dxs = np.zeros((L, *dx.shape), dtype=FLOAT)
        dxs[t] = dx
    assert dxs is not None
    return dxs


# =============================================================================
# Forward / backward
# =============================================================================


@dataclass(frozen=True, slots=True)
class SequenceCache:
    """Everything backward needs from one forward call."""

    spec: ModelSpec
    token_ids: IntArray
    valid: np.ndarray
    lengths: IntArray
    xs: np.ndarray
    runs: tuple[RecurrentRun, ...]
    reverse_index: IntArray | None
    features: Matrix
    dropout_mask: Matrix | None
    logits_shape: tuple[int, int]


def _prepare_tokens(
    spec: ModelSpec, tokens: Any, lengths: Any | None
) -> tuple[IntArray, IntArray, np.ndarray]:
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None, :]
    if ids.ndim != 2:
        raise ShapeError("token ids must be 1-D or (batch, length)", f"got shape {ids.shape}")
    B, L = ids.shape
    if B == 0 or L == 0:
        raise DataError("empty sequence", f"token shape {ids.shape}")
    lens = np.full(B, L, dtype=np.int64) if lengths is None else np.asarray(lengths, dtype=np.int64)
    if lens.shape != (B,):
        raise ShapeError("lengths must have one entry per sequence", f"{lens.shape} vs B={B}")
    if np.any(lens < 1):
        raise DataError("empty sequence", f"lengths={lens.tolist()}")
    if np.any(lens > L):
        raise ShapeError("length exceeds padded width", f"max length {int(lens.max())} > {L}")
    valid = np.arange(L)[None, :] < lens[:, None]
    used = ids[valid]
    if np.any(used < 0) or np.any(used >= spec.vocab_size):
        bad = int(used[(used < 0) | (used >= spec.vocab_size)][0])
        raise DataError("token id out of range", f"id {bad} not in [0, {spec.vocab_size})")
    return np.where(valid, ids, 0), lens, valid


def reverse_index(lengths: IntArray, L: int) -> IntArray:
    """Per-column time reversal of the first length positions, shape (L, B); an involution."""
    r = np.arange(L)[:, None]
    lens = np.asarray(lengths)[None, :]
    return np.where(r < lens, lens - 1 - r, r).astype(np.int64)


def _gather_time(a: np.ndarray, index: IntArray) -> np.ndarray:
    idx = np.broadcast_to(index[:, None, :], a.shape)
    return np.take_along_axis(a, idx, axis=0)


def _direction_features(spec: ModelSpec, hs: np.ndarray, lengths: IntArray) -> Matrix:
    L, n, B = hs.shape
    if spec.task == "lm":
        return hs.transpose(1, 0, 2).reshape(n, L * B)
    if spec.readout == "mean":
        valid = (np.arange(L)[:, None] < lengths[None, :]).astype(FLOAT)
        return sequential_sum(hs * valid[:, None, :]) / lengths[None, :].astype(FLOAT)
    return hs[lengths - 1, :, np.arange(B)].T.copy()


def _direction_features_backward(
    spec: ModelSpec, dfeat: Matrix, lengths: IntArray, shape: tuple[int, int, int]
) -> np.ndarray:
    L, n, B = shape
    if spec.task == "lm":
        return dfeat.reshape(n, L, B).transpose(1, 0, 2).copy()
    dhs = np.zeros(shape, dtype=FLOAT)
    if spec.readout == "mean":
        valid = (np.arange(L)[:, None] < lengths[None, :]).astype(FLOAT)
        dhs += (dfeat / lengths[None, :].astype(FLOAT))[None, :, :] * valid[:, None, :]
        return dhs
    dhs[lengths - 1, :, np.arange(B)] = dfeat.T
    return dhs


def forward(
    model: Model,
    tokens: Any,
    lengths: Any | None = None,
    mode: Mode = "eval",
    rng: Rng | None = None,
    *,
    perturb: tuple[int, Matrix] | None = None,
) -> tuple[Matrix, SequenceCache]:
    """Run the model on token ids.

    Args:
        model: The model.
        tokens: 1-D ids of one sequence, or a (B, L) right-padded id matrix.
        lengths: True length per row; defaults to the full width.
        mode: ``train`` applies inverted dropout to the recurrent output.
        rng: Dropout stream, required in train mode when dropout > 0.
        perturb: ``(t, delta)`` added to the carried state after step t, for
            finite-difference checks of the recurrence.

    Returns:
        (logits, cache). Classification logits are n_classes x B; language
        modeling logits are vocab x (L*B) with column t*B + b for position t
        of row b.
    """
    spec = model.spec
    if mode not in ("train", "eval"):
        raise ConfigError("mode must be train or eval", repr(mode))
    ids, lens, valid = _prepare_tokens(spec, tokens, lengths)
    B, L = ids.shape
    xs = model.tensors["embedding"][ids].transpose(1, 2, 0).copy()

    rev = None
    if spec.arch == "bilstm":
        rev = reverse_index(lens, L)
        runs = (
            _run_recurrent(model, "fwd", xs, lens, perturb),
            _run_recurrent(model, "bwd", _gather_time(xs, rev), lens),
        )
    else:
        runs = (_run_recurrent(model, "cell", xs, lens, perturb),)

    features = np.vstack([_direction_features(spec, run.hs, lens) for run in runs])
    mask = None
    if mode == "train" and spec.dropout > 0.0:
        if rng is None:
            raise ConfigError("train-mode forward with dropout needs an rng")
        keep = 1.0 - spec.dropout
        mask = (rng.random(features.shape) < keep).astype(FLOAT) / keep
        features_used = features * mask
    else:
        features_used = features
    logits = matmul(model.tensors["head.W"].T, features_used) + model.tensors["head.b"]
    cache = SequenceCache(
        spec=spec,
        token_ids=ids,
        valid=valid,
        lengths=lens,
        xs=xs,
        runs=runs,
        reverse_index=rev,
        features=features_used,
        dropout_mask=mask,
        logits_shape=logits.shape,
    )
    return logits, cache


def backward(
    model: Model,
    cache: SequenceCache,
    dlogits: Matrix,
    *,
    seed_state: Matrix | None = None,
    trace: dict[int, Matrix] | None = None,
) -> Gradients:
    """Analytic BPTT from logit gradients to every tensor and to the embedded inputs.

    ``seed_state`` adds a gradient on the final carried state of the first
    direction and ``trace`` receives the total gradient on that state after
    every step; both serve gradient-flow profiling.
    """
    spec = model.spec
    dlogits = np.asarray(dlogits, dtype=FLOAT)
    if cache.spec != spec:
        raise ShapeError("cache was produced by a different model spec")
    if dlogits.shape != cache.logits_shape:
        raise ShapeError("dlogits shape mismatch", f"{dlogits.shape} vs {cache.logits_shape}")

    grads: dict[str, Matrix] = {}
    head_W = model.tensors["head.W"]
    grads["head.W"] = matmul(cache.features, dlogits.T)
    grads["head.b"] = row_sum(dlogits)
    dfeat = matmul(head_W, dlogits)
    if cache.dropout_mask is not None:
        dfeat = dfeat * cache.dropout_mask

    n = spec.d_h
    dxs_total: np.ndarray | None = None
    for index, run in enumerate(cache.runs):
        part = dfeat[index * n : (index + 1) * n]
        dhs = _direction_features_backward(spec, part, cache.lengths, run.hs.shape)
        dxs = _recurrent_backward(
            model,
            run,
            dhs,
            grads,
            seed_state=seed_state if index == 0 else None,
            trace=trace if index == 0 else None,
        )
        if run.prefix == "bwd":
            assert cache.reverse_index is not None
            dxs = _gather_time(dxs, cache.reverse_index)
        dxs_total = dxs if dxs_total is None else dxs_total + dxs
    assert dxs_total is not None

    L = dxs_total.shape[0]
    dembed = np.zeros_like(model.tensors["embedding"])
    for t in range(L):
        cols = np.flatnonzero(cache.valid[:, t])
        if cols.size:
            np.add.at(dembed, cache.token_ids[cols, t], dxs_total[t][:, cols].T)
    grads["embedding"] = dembed

    ordered = {name: grads.get(name, np.zeros_like(value)) for name, value in model.tensors.items()}
    return Gradients(tensors=ordered, inputs=dxs_total)


def batch_targets(
    spec: ModelSpec, tokens: Any, lengths: Any | None, labels: Any | None = None
) -> tuple[IntArray, np.ndarray]:
    """Targets and loss mask aligned with forward's logit columns.

    Classification: one label per row. Language modeling: tokens[b, t+1] for
    every position t < length - 1, the remaining columns masked out.
    """
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None, :]
    B, L = ids.shape
    lens = np.full(B, L, dtype=np.int64) if lengths is None else np.asarray(lengths, dtype=np.int64)
    if spec.task == "classify":
        if labels is None:
            raise DataError("classification targets need labels")
        y = np.asarray(labels, dtype=np.int64).reshape(-1)
        if y.shape != (B,):
            raise ShapeError("one label per sequence", f"{y.shape} vs B={B}")
        return y, np.ones(B, dtype=bool)
    nxt = np.zeros((L, B), dtype=np.int64)
    nxt[:-1] = ids[:, 1:].T
    mask = np.arange(L)[:, None] < (lens[None, :] - 1)
    targets = np.where(mask, nxt, 0)
    return targets.reshape(L * B), mask.reshape(L * B)


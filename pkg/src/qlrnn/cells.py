# ABOUTME: Single-timestep recurrent cells: LSTM, GRU, PSUG gating and HGR-ASC block skips
# ABOUTME: Each step returns a cache consumed by the matching *_backward function for BPTT

"""Recurrent cell computations.

All step functions operate on ``d x B`` column batches. Gate slices of a
stacked PSUG transform are frozen in the order (i, f, o, g), so a PSUG
weight built by stacking LSTM per-gate matrices in that order reproduces
the LSTM trajectory bit for bit.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, TypeAlias

import numpy as np

from qlrnn.errors import EmptyBlockError, ParameterCountMismatch, ShapeError, SpecError
from qlrnn.numerics import FLOAT, Matrix, matmul, row_sum, sequential_sum, sigmoid, tanh_

if TYPE_CHECKING:
    from qlrnn.config import ModelSpec

GATE_ORDER: tuple[str, ...] = ("i", "f", "o", "g")
GRU_GATES: tuple[str, ...] = ("z", "r", "h")

Grads: TypeAlias = dict[str, Matrix]


def _check_rows(m: Matrix, rows: int, name: str) -> None:
    if m.ndim != 2 or m.shape[0] != rows:
        raise ShapeError(f"{name} has wrong shape", f"expected ({rows}, B), got {m.shape}")


def _check_batch(*ms: Matrix) -> None:
    widths = {m.shape[1] for m in ms}
    if len(widths) != 1:
        raise ShapeError("batch widths differ", str([m.shape for m in ms]))


# =============================================================================
# Parameter containers
# =============================================================================


@dataclass(frozen=True, slots=True)
class LstmParams:
    """Per-gate LSTM weights; W_* is d_h x d_x, U_* is d_h x d_h, b_* is d_h x 1."""

    W_i: Matrix
    W_f: Matrix
    W_o: Matrix
    W_g: Matrix
    U_i: Matrix
    U_f: Matrix
    U_o: Matrix
    U_g: Matrix
    b_i: Matrix
    b_f: Matrix
    b_o: Matrix
    b_g: Matrix

    def __post_init__(self) -> None:
        d_h, d_x = self.W_i.shape
        for gate in GATE_ORDER:
            if getattr(self, f"W_{gate}").shape != (d_h, d_x):
                raise ShapeError(f"W_{gate} shape", str(getattr(self, f"W_{gate}").shape))
            if getattr(self, f"U_{gate}").shape != (d_h, d_h):
                raise ShapeError(f"U_{gate} shape", str(getattr(self, f"U_{gate}").shape))
            if getattr(self, f"b_{gate}").shape != (d_h, 1):
                raise ShapeError(f"b_{gate} shape", str(getattr(self, f"b_{gate}").shape))

    @property
    def d_h(self) -> int:
        return int(self.W_i.shape[0])

    @property
    def d_x(self) -> int:
        return int(self.W_i.shape[1])

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, Matrix], prefix: str) -> LstmParams:
        return cls(**{name: tensors[f"{prefix}.{name}"] for name in lstm_tensor_names()})

    @classmethod
    def zeros(cls, d_h: int, d_x: int) -> LstmParams:
        shapes = lstm_shapes(d_h, d_x)
        return cls(**{name: np.zeros(shape, dtype=FLOAT) for name, shape in shapes.items()})

    def tensors(self) -> dict[str, Matrix]:
        return {name: getattr(self, name) for name in lstm_tensor_names()}

    def count(self) -> int:
        return sum(t.size for t in self.tensors().values())

    def stacked(self) -> PsugParams:
        """Stack per-gate matrices in (i, f, o, g) order into one PSUG transform."""
        return PsugParams(
            W=np.vstack([getattr(self, f"W_{g}") for g in GATE_ORDER]),
            U=np.vstack([getattr(self, f"U_{g}") for g in GATE_ORDER]),
            b=np.vstack([getattr(self, f"b_{g}") for g in GATE_ORDER]),
        )


@dataclass(frozen=True, slots=True)
class PsugParams:
    """Shared gating transform: W is 4d_h x d_x, U is 4d_h x d_h, b = [b_i; b_f; b_o; b_g]."""

    W: Matrix
    U: Matrix
    b: Matrix

    def __post_init__(self) -> None:
        rows = self.W.shape[0]
        if rows % 4 or self.U.shape != (rows, rows // 4) or self.b.shape != (rows, 1):
            raise ShapeError(
                "PSUG shapes do not conform", f"W{self.W.shape} U{self.U.shape} b{self.b.shape}"
            )

    @property
    def d_h(self) -> int:
        return int(self.W.shape[0] // 4)

    @property
    def d_x(self) -> int:
        return int(self.W.shape[1])

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, Matrix], prefix: str) -> PsugParams:
        return cls(W=tensors[f"{prefix}.W"], U=tensors[f"{prefix}.U"], b=tensors[f"{prefix}.b"])

    def tensors(self) -> dict[str, Matrix]:
        return {"W": self.W, "U": self.U, "b": self.b}

    def count(self) -> int:
        return int(self.W.size + self.U.size + self.b.size)


@dataclass(frozen=True, slots=True)
class GruParams:
    """GRU weights for update (z), reset (r) and candidate (h) paths."""

    W_z: Matrix
    W_r: Matrix
    W_h: Matrix
    U_z: Matrix
    U_r: Matrix
    U_h: Matrix
    b_z: Matrix
    b_r: Matrix
    b_h: Matrix

    @property
    def d_h(self) -> int:
        return int(self.W_z.shape[0])

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, Matrix], prefix: str) -> GruParams:
        return cls(**{name: tensors[f"{prefix}.{name}"] for name in gru_tensor_names()})

    def tensors(self) -> dict[str, Matrix]:
        return {name: getattr(self, name) for name in gru_tensor_names()}

    def count(self) -> int:
        return sum(t.size for t in self.tensors().values())


@dataclass(frozen=True, slots=True)
class SkipParams:
    """Block-summary projection: W_p is d_h x p, b_p is d_h x 1."""

    W_p: Matrix
    b_p: Matrix

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, Matrix], prefix: str) -> SkipParams:
        return cls(W_p=tensors[f"{prefix}.W_p"], b_p=tensors[f"{prefix}.b_p"])

    def tensors(self) -> dict[str, Matrix]:
        return {"W_p": self.W_p, "b_p": self.b_p}

    def count(self) -> int:
        return int(self.W_p.size + self.b_p.size)


GateParams: TypeAlias = LstmParams | PsugParams


def lstm_tensor_names() -> list[str]:
    return [f"{kind}_{g}" for kind in ("W", "U", "b") for g in GATE_ORDER]


def gru_tensor_names() -> list[str]:
    return [f"{kind}_{g}" for kind in ("W", "U", "b") for g in GRU_GATES]


def lstm_shapes(d_h: int, d_x: int) -> dict[str, tuple[int, int]]:
    shapes: dict[str, tuple[int, int]] = {}
    for kind, cols in (("W", d_x), ("U", d_h), ("b", 1)):
        for g in GATE_ORDER:
            shapes[f"{kind}_{g}"] = (d_h, cols)
    return shapes


def gru_shapes(d_h: int, d_x: int) -> dict[str, tuple[int, int]]:
    shapes: dict[str, tuple[int, int]] = {}
    for kind, cols in (("W", d_x), ("U", d_h), ("b", 1)):
        for g in GRU_GATES:
            shapes[f"{kind}_{g}"] = (d_h, cols)
    return shapes


def psug_shapes(d_h: int, d_x: int) -> dict[str, tuple[int, int]]:
    return {"W": (4 * d_h, d_x), "U": (4 * d_h, d_h), "b": (4 * d_h, 1)}


def skip_shapes(d_h: int, pool_width: int) -> dict[str, tuple[int, int]]:
    return {"W_p": (d_h, pool_width), "b_p": (d_h, 1)}


# =============================================================================
# Gated (LSTM-family) step
# =============================================================================


@dataclass(frozen=True, slots=True)
class GateCache:
    """Values one gated step retains for its backward pass; c is the pre-skip cell."""

    x: Matrix
    h_prev: Matrix
    c_prev: Matrix
    i: Matrix
    f: Matrix
    o: Matrix
    g: Matrix
    c: Matrix
    tanh_c: Matrix


def psug_gates(p: PsugParams, x_t: Matrix, h_prev: Matrix) -> tuple[Matrix, Matrix, Matrix, Matrix]:
    """One shared affine transform, sliced into (i, f, o, g) activations."""
    _check_rows(x_t, p.d_x, "x_t")
    _check_rows(h_prev, p.d_h, "h_prev")
    _check_batch(x_t, h_prev)
    n = p.d_h
    z = matmul(p.W, x_t) + matmul(p.U, h_prev) + p.b
    return sigmoid(z[:n]), sigmoid(z[n : 2 * n]), sigmoid(z[2 * n : 3 * n]), tanh_(z[3 * n :])


def lstm_gates(p: LstmParams, x_t: Matrix, h_prev: Matrix) -> tuple[Matrix, Matrix, Matrix, Matrix]:
    """Four independent affine transforms, one per gate."""
    _check_rows(x_t, p.d_x, "x_t")
    _check_rows(h_prev, p.d_h, "h_prev")
    _check_batch(x_t, h_prev)
    pre = {
        g: matmul(getattr(p, f"W_{g}"), x_t) + matmul(getattr(p, f"U_{g}"), h_prev) + getattr(p, f"b_{g}")
        for g in GATE_ORDER
    }
    return sigmoid(pre["i"]), sigmoid(pre["f"]), sigmoid(pre["o"]), tanh_(pre["g"])


def gate_activations(
    p: GateParams, x_t: Matrix, h_prev: Matrix
) -> tuple[Matrix, Matrix, Matrix, Matrix]:
    if isinstance(p, PsugParams):
        return psug_gates(p, x_t, h_prev)
    return lstm_gates(p, x_t, h_prev)


def gated_step(
    p: GateParams, x_t: Matrix, h_prev: Matrix, c_prev: Matrix
) -> tuple[Matrix, Matrix, GateCache]:
    """Gates followed by c_t = f*c_prev + i*g and h_t = o*tanh(c_t)."""
    i, f, o, g = gate_activations(p, x_t, h_prev)
    _check_rows(c_prev, p.d_h, "c_prev")
    c = f * c_prev + i * g
    tanh_c = tanh_(c)
    h = o * tanh_c
    return h, c, GateCache(x_t, h_prev, c_prev, i, f, o, g, c, tanh_c)


def lstm_step(
    p: LstmParams, x_t: Matrix, h_prev: Matrix, c_prev: Matrix
) -> tuple[Matrix, Matrix, GateCache]:
    """Classical LSTM step."""
    return gated_step(p, x_t, h_prev, c_prev)


def gate_backward(
    p: GateParams, cache: GateCache, dc: Matrix, do: Matrix
) -> tuple[Matrix, Matrix, Matrix, Grads]:
    """Backpropagate through the gates and the c update.

    Args:
        p: Gate parameters used in the forward step.
        cache: The step's GateCache.
        dc: Total gradient reaching the pre-skip cell state c.
        do: Total gradient reaching the output gate activation.

    Returns:
        (dx, dh_prev, dc_prev, parameter gradients keyed by local tensor name)
    """
    di = dc * cache.g
    dg = dc * cache.i
    df = dc * cache.c_prev
    dc_prev = dc * cache.f
    dz = {
        "i": di * cache.i * (1.0 - cache.i),
        "f": df * cache.f * (1.0 - cache.f),
        "o": do * cache.o * (1.0 - cache.o),
        "g": dg * (1.0 - cache.g * cache.g),
    }
    grads: Grads = {}
    if isinstance(p, PsugParams):
        dz_all = np.vstack([dz[g] for g in GATE_ORDER])
        grads["W"] = matmul(dz_all, cache.x.T)
        grads["U"] = matmul(dz_all, cache.h_prev.T)
        grads["b"] = row_sum(dz_all)
        dx = matmul(p.W.T, dz_all)
        dh_prev = matmul(p.U.T, dz_all)
        return dx, dh_prev, dc_prev, grads

    dx = np.zeros_like(cache.x)
    dh_prev = np.zeros_like(cache.h_prev)
    for g in GATE_ORDER:
        W = getattr(p, f"W_{g}")
        U = getattr(p, f"U_{g}")
        grads[f"W_{g}"] = matmul(dz[g], cache.x.T)
        grads[f"U_{g}"] = matmul(dz[g], cache.h_prev.T)
        grads[f"b_{g}"] = row_sum(dz[g])
        dx = dx + matmul(W.T, dz[g])
        dh_prev = dh_prev + matmul(U.T, dz[g])
    return dx, dh_prev, dc_prev, grads


def gated_step_backward(
    p: GateParams, cache: GateCache, dh: Matrix, dc: Matrix
) -> tuple[Matrix, Matrix, Matrix, Grads]:
    """Backward of gated_step given gradients on its outputs h_t and c_t."""
    dc_total = dc + dh * cache.o * (1.0 - cache.tanh_c * cache.tanh_c)
    do = dh * cache.tanh_c
    return gate_backward(p, cache, dc_total, do)


# =============================================================================
# GRU
# =============================================================================


@dataclass(frozen=True, slots=True)
class GruCache:
    x: Matrix
    h_prev: Matrix
    z: Matrix
    r: Matrix
    rh: Matrix
    n: Matrix


def gru_step(p: GruParams, x_t: Matrix, h_prev: Matrix) -> tuple[Matrix, GruCache]:
    """GRU step; the reset gate scales h_prev inside the candidate transform."""
    _check_rows(x_t, p.W_z.shape[1], "x_t")
    _check_rows(h_prev, p.d_h, "h_prev")
    _check_batch(x_t, h_prev)
    z = sigmoid(matmul(p.W_z, x_t) + matmul(p.U_z, h_prev) + p.b_z)
    r = sigmoid(matmul(p.W_r, x_t) + matmul(p.U_r, h_prev) + p.b_r)
    rh = r * h_prev
    n = tanh_(matmul(p.W_h, x_t) + matmul(p.U_h, rh) + p.b_h)
    h = (1.0 - z) * h_prev + z * n
    return h, GruCache(x_t, h_prev, z, r, rh, n)


def gru_step_backward(p: GruParams, cache: GruCache, dh: Matrix) -> tuple[Matrix, Matrix, Grads]:
    """Backward of gru_step: (dx, dh_prev, parameter gradients)."""
    dz = dh * (cache.n - cache.h_prev)
    dn = dh * cache.z
    dh_prev = dh * (1.0 - cache.z)

    da_h = dn * (1.0 - cache.n * cache.n)
    grads: Grads = {
        "W_h": matmul(da_h, cache.x.T),
        "U_h": matmul(da_h, cache.rh.T),
        "b_h": row_sum(da_h),
    }
    dx = matmul(p.W_h.T, da_h)
    drh = matmul(p.U_h.T, da_h)
    dr = drh * cache.h_prev
    dh_prev = dh_prev + drh * cache.r

    da_z = dz * cache.z * (1.0 - cache.z)
    da_r = dr * cache.r * (1.0 - cache.r)
    for name, da in (("z", da_z), ("r", da_r)):
        grads[f"W_{name}"] = matmul(da, cache.x.T)
        grads[f"U_{name}"] = matmul(da, cache.h_prev.T)
        grads[f"b_{name}"] = row_sum(da)
        dx = dx + matmul(getattr(p, f"W_{name}").T, da)
        dh_prev = dh_prev + matmul(getattr(p, f"U_{name}").T, da)
    return dx, dh_prev, grads


# =============================================================================
# Block pooling and summary projection
# =============================================================================


@dataclass(frozen=True, slots=True)
class PoolCache:
    method: str
    n: int
    argmax: np.ndarray | None


def pool_stack(stack: np.ndarray, method: str) -> tuple[Matrix, PoolCache]:
    """Pool an (n, d_h, B) stack of hidden states over its first axis."""
    n = stack.shape[0]
    if n == 0:
        raise EmptyBlockError("cannot pool an empty block")
    argmax = None
    if method == "mean":
        pooled = sequential_sum(stack) / n
    elif method == "max":
        argmax = np.argmax(stack, axis=0)
        pooled = np.max(stack, axis=0)
    elif method == "mean_max":
        argmax = np.argmax(stack, axis=0)
        pooled = np.vstack([sequential_sum(stack) / n, np.max(stack, axis=0)])
    else:
        raise SpecError(f"unknown pooling method {method!r}")
    return pooled, PoolCache(method, n, argmax)


def pool_stack_backward(dpooled: Matrix, cache: PoolCache) -> np.ndarray:
    """Gradient with respect to each pooled row; max routes to the first argmax."""
    n = cache.n
    if cache.method == "mean_max":
        half = dpooled.shape[0] // 2
        d_mean, d_max = dpooled[:half], dpooled[half:]
    elif cache.method == "mean":
        d_mean, d_max = dpooled, None
    else:
        d_mean, d_max = None, dpooled

    shape = (n, *(d_mean if d_mean is not None else d_max).shape)  # type: ignore[union-attr]
    dstack = np.zeros(shape, dtype=FLOAT)
    if d_mean is not None:
        dstack += (d_mean / n)[None, :, :]
    if d_max is not None:
        assert cache.argmax is not None
        hit = np.arange(n)[:, None, None] == cache.argmax[None, :, :]
        dstack += hit * d_max[None, :, :]
    return dstack


def pool_block(H_k: Matrix, method: str) -> Matrix:
    """Pool a K x d_h block of hidden-state rows into a p x 1 column."""
    if H_k.ndim != 2 or H_k.shape[0] == 0:
        raise EmptyBlockError("cannot pool an empty block", f"shape {H_k.shape}")
    pooled, _ = pool_stack(H_k[:, :, None], method)
    return pooled


def block_summary(sp: SkipParams, pooled: Matrix) -> Matrix:
    """s_k = W_p pooled + b_p."""
    _check_rows(pooled, sp.W_p.shape[1], "pooled")
    return matmul(sp.W_p, pooled) + sp.b_p


# =============================================================================
# HGR-ASC recurrent state and steps
# =============================================================================


@dataclass(frozen=True, slots=True)
class QLState:
    """Recurrent state of a QL sequence; t is the 1-based index of the next step."""

    h: Matrix
    c: Matrix
    c_long: Matrix
    block_buffer: tuple[Matrix, ...] = ()
    t: int = 1

    @classmethod
    def initial(cls, d_h: int, batch: int = 1) -> QLState:
        zeros = np.zeros((d_h, batch), dtype=FLOAT)
        return cls(h=zeros, c=zeros.copy(), c_long=zeros.copy())


@dataclass(frozen=True, slots=True)
class SkipCache:
    """Block-boundary bookkeeping of a summary-variant step."""

    stack: np.ndarray
    pooled: Matrix
    pool: PoolCache
    mask: Matrix | None
    c_post: Matrix
    tanh_post: Matrix
    cleared: bool


@dataclass(frozen=True, slots=True)
class QLStepCache:
    """Cache of one QL step: gates, plus the skip record when the skip fired."""

    gates: GateCache
    boundary: bool
    skip: SkipCache | None = None
    c_long_prev: Matrix | None = None
    c_star: Matrix | None = None
    tanh_star: Matrix | None = None
    block_steps: tuple[int, ...] = field(default=())


def _check_leap(K: int) -> None:
    if K < 1:
        raise SpecError("leap interval K must be >= 1", f"K={K}")


def ql_step_summary(
    p: GateParams,
    sp: SkipParams,
    st: QLState,
    x_t: Matrix,
    K: int,
    pooling: str,
    *,
    flush: Matrix | None = None,
    s_offset: Matrix | None = None,
) -> tuple[Matrix, QLState, QLStepCache]:
    """QL step with the pooled block-summary skip.

    The pre-skip h_t joins the block buffer. When t is divisible by K, or a
    column's sequence ends here and ``flush`` marks it, the buffer is
    pooled, projected to s_k and added to c_t; h_t is then recomputed from
    the updated cell. ``flush`` is a 1 x B 0/1 mask; ``s_offset`` is added
    to s_k and exists for probing the skip path.
    """
    _check_leap(K)
    h_pre, c_pre, gates = gated_step(p, x_t, st.h, st.c)
    buffer = (*st.block_buffer, h_pre)
    boundary = st.t % K == 0
    fires = boundary or (flush is not None and bool(np.any(flush)))
    if not fires:
        state = QLState(h_pre, c_pre, st.c_long, buffer, st.t + 1)
        return h_pre, state, QLStepCache(gates, boundary=False)

    stack = np.stack(buffer)
    pooled, pool_cache = pool_stack(stack, pooling)
    s_k = block_summary(sp, pooled)
    if s_offset is not None:
        s_k = s_k + s_offset
    mask = None if boundary else np.asarray(flush, dtype=FLOAT)
    c_post = c_pre + s_k if mask is None else c_pre + s_k * mask
    tanh_post = tanh_(c_post)
    h_post = gates.o * tanh_post
    kept: tuple[Matrix, ...] = () if boundary else buffer
    state = QLState(h_post, c_post, st.c_long, kept, st.t + 1)
    skip = SkipCache(stack, pooled, pool_cache, mask, c_post, tanh_post, cleared=boundary)
    return h_post, state, QLStepCache(gates, boundary=boundary, skip=skip)


def ql_step_carry(
    p: GateParams, st: QLState, x_t: Matrix, K: int
) -> tuple[Matrix, QLState, QLStepCache]:
    """QL step with the carried long-term state C_L.

    At a boundary c* = c_t + C_L and C_L becomes c*; elsewhere c* = c_t.
    h_t = o * tanh(c*). The short-term state handed to the next step is the
    pre-skip c_t.
    """
    _check_leap(K)
    h_t, c_t, gates = gated_step(p, x_t, st.h, st.c)
    if st.t % K != 0:
        state = QLState(h_t, c_t, st.c_long, (), st.t + 1)
        return h_t, state, QLStepCache(gates, boundary=False)

    c_star = c_t + st.c_long
    tanh_star = tanh_(c_star)
    h_star = gates.o * tanh_star
    state = QLState(h_star, c_t, c_star, (), st.t + 1)
    cache = QLStepCache(
        gates, boundary=True, c_long_prev=st.c_long, c_star=c_star, tanh_star=tanh_star
    )
    return h_star, state, cache


def ql_summary_backward(
    p: GateParams,
    sp: SkipParams,
    cache: QLStepCache,
    dh: Matrix,
    dc: Matrix,
    dh_buffer: Matrix,
) -> tuple[Matrix, Matrix, Matrix, Grads, Grads, np.ndarray | None]:
    """Backward of ql_step_summary.

    Args:
        dh, dc: Gradients on the step's emitted h_t and carried c_t.
        dh_buffer: Gradient reaching this step's buffered (pre-skip) h_t from
            the pooling of a later boundary; zeros if none.

    Returns:
        (dx, dh_prev, dc_prev, gate grads, skip grads, dstack) where dstack is
        the gradient on every buffered row pooled at this step, or None.
    """
    g = cache.gates
    skip_grads: Grads = {}
    dstack = None
    if cache.skip is None:
        dh_pre = dh + dh_buffer
        dc_pre = dc
        do = np.zeros_like(dh)
    else:
        sk = cache.skip
        dc_post = dc + dh * g.o * (1.0 - sk.tanh_post * sk.tanh_post)
        do = dh * sk.tanh_post
        ds = dc_post if sk.mask is None else dc_post * sk.mask
        skip_grads["W_p"] = matmul(ds, sk.pooled.T)
        skip_grads["b_p"] = row_sum(ds)
        dpooled = matmul(sp.W_p.T, ds)
        dstack = pool_stack_backward(dpooled, sk.pool)
        dc_pre = dc_post
        dh_pre = dh_buffer + dstack[-1]
    dc_pre = dc_pre + dh_pre * g.o * (1.0 - g.tanh_c * g.tanh_c)
    do = do + dh_pre * g.tanh_c
    dx, dh_prev, dc_prev, gate_grads = gate_backward(p, g, dc_pre, do)
    return dx, dh_prev, dc_prev, gate_grads, skip_grads, dstack


def ql_carry_backward(
    p: GateParams, cache: QLStepCache, dh: Matrix, dc: Matrix, dc_long: Matrix
) -> tuple[Matrix, Matrix, Matrix, Matrix, Grads]:
    """Backward of ql_step_carry: (dx, dh_prev, dc_prev, dC_L_prev, gate grads)."""
    g = cache.gates
    if not cache.boundary:
        dx, dh_prev, dc_prev, grads = gated_step_backward(p, g, dh, dc)
        return dx, dh_prev, dc_prev, dc_long, grads
    assert cache.tanh_star is not None
    dc_star = dh * g.o * (1.0 - cache.tanh_star * cache.tanh_star) + dc_long
    do = dh * cache.tanh_star
    dx, dh_prev, dc_prev, grads = gate_backward(p, g, dc + dc_star, do)
    return dx, dh_prev, dc_prev, dc_star, grads


# =============================================================================
# Bidirectional wrapper
# =============================================================================


def lstm_sequence(
    p: LstmParams, xs: Sequence[Matrix]
) -> tuple[list[Matrix], list[Matrix], list[GateCache]]:
    """Run lstm_step over a sequence from zero state: (hs, cs, caches)."""
    batch = xs[0].shape[1]
    h = np.zeros((p.d_h, batch), dtype=FLOAT)
    c = np.zeros((p.d_h, batch), dtype=FLOAT)
    hs, cs, caches = [], [], []
    for x in xs:
        h, c, cache = lstm_step(p, x, h, c)
        hs.append(h)
        cs.append(c)
        caches.append(cache)
    return hs, cs, caches


def bilstm_forward(fwd: LstmParams, bwd: LstmParams, xs: Sequence[Matrix]) -> list[Matrix]:
    """Per-position [h_fwd(t); h_bwd(t)], h_bwd run over the reversed sequence."""
    if not xs:
        raise ShapeError("bilstm_forward needs a non-empty sequence")
    if (fwd.d_h, fwd.d_x) != (bwd.d_h, bwd.d_x):
        raise ShapeError("direction shapes differ", f"{(fwd.d_h, fwd.d_x)} vs {(bwd.d_h, bwd.d_x)}")
    h_fwd, _, _ = lstm_sequence(fwd, xs)
    h_bwd, _, _ = lstm_sequence(bwd, list(reversed(xs)))
    h_bwd.reverse()
    return [np.vstack([hf, hb]) for hf, hb in zip(h_fwd, h_bwd, strict=True)]


# =============================================================================
# Parameter accounting and cost model
# =============================================================================


@dataclass(frozen=True, slots=True)
class CellCount:
    """Enumerated tensor sizes of a cell next to the closed-form count."""

    enumerated: int
    closed_form: int
    tensors: dict[str, tuple[int, int]]


def cell_tensor_shapes(spec: ModelSpec) -> dict[str, tuple[int, int]]:
    """Shapes of the recurrent layer's tensors (cell plus skip), keyed by model name."""
    n, m = spec.d_h, spec.d_emb
    shapes: dict[str, tuple[int, int]] = {}

    def put(prefix: str, local: dict[str, tuple[int, int]]) -> None:
        shapes.update({f"{prefix}.{k}": v for k, v in local.items()})

    if spec.arch in ("lstm", "hgr_only"):
        put("cell", lstm_shapes(n, m))
    elif spec.arch == "gru":
        put("cell", gru_shapes(n, m))
    elif spec.arch == "bilstm":
        put("fwd", lstm_shapes(n, m))
        put("bwd", lstm_shapes(n, m))
    elif spec.arch in ("psug_only", "ql_full"):
        put("cell", psug_shapes(n, m))
    else:
        raise SpecError(f"unknown architecture {spec.arch!r}")
    if spec.uses_summary:
        put("skip", skip_shapes(n, spec.pool_width))
    return shapes


def closed_form_cell_params(spec: ModelSpec) -> int:
    """Closed-form scalar count of the recurrent layer."""
    n, m = spec.d_h, spec.d_emb
    skip = n * spec.pool_width + n if spec.uses_summary else 0
    if spec.arch == "lstm":
        return 4 * (n * m + n * n + n)
    if spec.arch == "gru":
        return 3 * (n * m + n * n + n)
    if spec.arch == "bilstm":
        return 2 * 4 * (n * m + n * n + n)
    if spec.arch in ("psug_only", "ql_full"):
        return 4 * n * m + 4 * n * n + 4 * n + skip
    if spec.arch == "hgr_only":
        return 4 * (n * m + n * n + n) + skip
    raise SpecError(f"unknown architecture {spec.arch!r}")


def count_cell_params(spec: ModelSpec) -> CellCount:
    """Enumerate the cell's tensors and check the sum against the closed form."""
    shapes = cell_tensor_shapes(spec)
    enumerated = sum(r * c for r, c in shapes.values())
    closed = closed_form_cell_params(spec)
    if enumerated != closed:
        raise ParameterCountMismatch(
            "cell parameter enumeration disagrees with closed form",
            f"arch={spec.arch} enumerated={enumerated} closed_form={closed}",
        )
    return CellCount(enumerated=enumerated, closed_form=closed, tensors=shapes)


def cell_macs_per_step(spec: ModelSpec) -> float:
    """Analytic multiply-accumulates per timestep, block work amortized over K."""
    n, m = spec.d_h, spec.d_emb
    affine = n * m + n * n
    if spec.arch == "gru":
        return float(3 * affine)
    if spec.arch == "bilstm":
        return float(2 * 4 * affine)
    base = float(4 * affine)
    if spec.uses_summary:
        K = spec.leap_interval
        base += (K * spec.pool_width + n * spec.pool_width) / K
    return base

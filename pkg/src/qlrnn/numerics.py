# ABOUTME: Dense float64 linear algebra, nonlinearities, seeded RNG and a gradient oracle
# ABOUTME: Every reduction runs in a fixed left-to-right order so results are bit-reproducible

"""Numerical primitives shared by every other module.

A ``Matrix`` is a 2-D numpy array of float64. Recurrent code treats a
``d x B`` matrix as B column vectors processed side by side, so a single
sequence is simply the ``B = 1`` case.

Summation order is fixed: ``matmul`` and ``row_sum`` accumulate strictly
left to right (``np.cumsum`` is a sequential accumulate), never through
BLAS or pairwise reduction. The RNG is numpy's Philox counter-based
generator keyed by a SeedSequence, which yields the same stream on every
platform.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from typing import TypeAlias

import numpy as np
import numpy.typing as npt

from qlrnn.errors import NumericError, ShapeError

Matrix: TypeAlias = npt.NDArray[np.float64]
IntArray: TypeAlias = npt.NDArray[np.int64]

FLOAT = np.float64

# Upper bound on the temporary product tensor materialized per matmul chunk.
_CHUNK_ELEMENTS = 1 << 20


def as_matrix(values: object) -> Matrix:
    """Coerce nested sequences or arrays into a 2-D float64 Matrix."""
    arr = np.array(values, dtype=FLOAT)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ShapeError("matrix must be 2-D", f"got shape {arr.shape}")
    return arr


def column(values: object) -> Matrix:
    """Build a d x 1 column vector."""
    return np.array(values, dtype=FLOAT).reshape(-1, 1)


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product with a fixed left-to-right summation order per dot product."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul dimension mismatch", f"{a.shape} x {b.shape}")
    rows, inner = a.shape
    cols = b.shape[1]
    if inner == 0:
        return np.zeros((rows, cols), dtype=FLOAT)

    step = max(1, _CHUNK_ELEMENTS // max(1, rows * cols))
    acc: Matrix | None = None
    for start in range(0, inner, step):
        stop = min(inner, start + step)
        terms = a[:, start:stop, None] * b[None, start:stop, :]
        if acc is not None:
            terms = np.concatenate([acc[:, None, :], terms], axis=1)
        acc = np.cumsum(terms, axis=1)[:, -1, :]
    assert acc is not None
    return np.ascontiguousarray(acc)


def row_sum(a: Matrix) -> Matrix:
    """Sum each row left to right, returning a column vector."""
    if a.shape[1] == 0:
        return np.zeros((a.shape[0], 1), dtype=FLOAT)
    return np.cumsum(a, axis=1)[:, -1:].copy()


def sequential_sum(stack: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    """Sum a stack of arrays over its leading axis in index order."""
    return np.cumsum(stack, axis=0)[-1].copy()


def sigmoid(x: Matrix) -> Matrix:
    """Logistic function, branching on sign so |x| up to 700 never overflows."""
    x = np.asarray(x, dtype=FLOAT)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def tanh_(x: Matrix) -> Matrix:
    """Elementwise hyperbolic tangent."""
    return np.tanh(np.asarray(x, dtype=FLOAT))


def logit(p: float) -> float:
    """Inverse of the logistic function for p in (0, 1)."""
    if not 0.0 < p < 1.0:
        raise NumericError("logit undefined", f"p={p!r} outside (0, 1)")
    return math.log(p / (1.0 - p))


def check_finite(m: npt.NDArray[np.float64], what: str) -> None:
    """Raise NumericError if any entry of m is NaN or infinite."""
    if not np.all(np.isfinite(m)):
        raise NumericError("non-finite values", what)


def fd_gradient(
    f: Callable[[Matrix], float],
    x: Matrix,
    h: float = 1e-5,
) -> Matrix:
    """Central-difference gradient of a scalar function of a Matrix.

    Args:
        f: Scalar function; receives a fresh copy of the evaluation point each call.
        x: Point at which to differentiate.
        h: Step size, must be positive.

    Returns:
        Matrix of the same shape as x holding (f(x+h e_i) - f(x-h e_i)) / 2h.
    """
    if h <= 0:
        raise NumericError("finite-difference step must be positive", f"h={h!r}")
    base = np.array(x, dtype=FLOAT)
    grad = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        orig = base[idx]
        base[idx] = orig + h
        f_plus = float(f(base.copy()))
        base[idx] = orig - h
        f_minus = float(f(base.copy()))
        base[idx] = orig
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise NumericError("non-finite function value", f"coordinate {idx}")
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
    return grad


def max_relative_error(
    analytic: npt.NDArray[np.float64],
    numeric: npt.NDArray[np.float64],
    floor: float = 1e-5,
) -> float:
    """Largest absolute disagreement scaled by the tensor's gradient magnitude."""
    scale = max(
        float(np.max(np.abs(analytic), initial=0.0)),
        float(np.max(np.abs(numeric), initial=0.0)),
        floor,
    )
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale


class Rng:
    """Seeded Philox stream; equal (seed, stream) keys give equal draws everywhere."""

    __slots__ = ("_gen", "seed", "stream")

    def __init__(self, seed: int, *stream: int) -> None:
        if seed < 0 or seed >= 2**64:
            raise NumericError("seed must be a 64-bit unsigned integer", f"seed={seed}")
        self.seed = seed
        self.stream = tuple(stream)
        sequence = np.random.SeedSequence([seed, *stream])
        self._gen = np.random.Generator(np.random.Philox(sequence))

    def derive(self, *keys: int) -> Rng:
        """Independent child stream keyed by this stream plus keys."""
        return Rng(self.seed, *self.stream, *keys)

    def random(self, shape: tuple[int, ...]) -> npt.NDArray[np.float64]:
        return self._gen.random(shape)

    def uniform(self, low: float, high: float, shape: tuple[int, ...]) -> npt.NDArray[np.float64]:
        return self._gen.uniform(low, high, shape)

    def normal(self, shape: tuple[int, ...], scale: float = 1.0) -> npt.NDArray[np.float64]:
        return self._gen.normal(0.0, scale, shape)

    def integers(self, low: int, high: int, size: int | tuple[int, ...]) -> IntArray:
        return self._gen.integers(low, high, size=size, dtype=np.int64)

    def permutation(self, n: int) -> IntArray:
        return self._gen.permutation(n).astype(np.int64)

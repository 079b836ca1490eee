# ABOUTME: Unit tests for numerical primitives
# ABOUTME: Tests summation order, nonlinearities, the finite-difference oracle and the RNG

import math

import numpy as np
import pytest

from qlrnn.errors import NumericError, ShapeError
from qlrnn.numerics import (
    Rng,
    as_matrix,
    check_finite,
    column,
    fd_gradient,
    logit,
    matmul,
    max_relative_error,
    row_sum,
    sigmoid,
    tanh_,
)


def loop_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


@pytest.mark.unit
class TestMatmul:
    """Tests for the fixed-order matrix product."""

    def test_matches_left_to_right_loop_bit_for_bit(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(5, 7))
        b = rng.normal(size=(7, 3))
        np.testing.assert_array_equal(matmul(a, b), loop_matmul(a, b))

    def test_chunked_accumulation_keeps_order(self, monkeypatch):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(3, 11))
        b = rng.normal(size=(11, 2))
        whole = matmul(a, b)
        monkeypatch.setattr("qlrnn.numerics._CHUNK_ELEMENTS", 6)
        np.testing.assert_array_equal(matmul(a, b), whole)

    def test_columns_are_independent_of_batch(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(4, 6))
        b = rng.normal(size=(6, 5))
        np.testing.assert_array_equal(matmul(a, b)[:, 2:3], matmul(a, b[:, 2:3]))

    def test_dimension_mismatch_names_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\) x \(4, 1\)"):
            matmul(np.zeros((2, 3)), np.zeros((4, 1)))

    def test_empty_inner_dimension_gives_zeros(self):
        out = matmul(np.zeros((2, 0)), np.zeros((0, 3)))
        assert out.shape == (2, 3)
        assert not out.any()

    def test_row_sum_left_to_right(self):
        a = np.array([[1e16, 1.0, -1e16, 1.0]])
        # (((1e16 + 1) - 1e16) + 1) == 1.0 in float64
        assert row_sum(a)[0, 0] == 1.0


@pytest.mark.unit
class TestNonlinearities:
    """Tests for sigmoid, tanh and logit."""

    def test_sigmoid_extremes_stay_finite(self):
        out = sigmoid(np.array([[-700.0], [0.0], [700.0]]))
        assert np.all(np.isfinite(out))
        assert out[1, 0] == 0.5
        assert out[2, 0] == 1.0

    def test_sigmoid_symmetry(self):
        x = np.linspace(-8, 8, 33).reshape(-1, 1)
        np.testing.assert_allclose(sigmoid(x) + sigmoid(-x), 1.0, atol=1e-15)

    def test_logit_inverts_sigmoid(self):
        for p in (0.1, 0.5, 0.9):
            assert sigmoid(np.array([[logit(p)]]))[0, 0] == pytest.approx(p, abs=1e-15)

    def test_logit_rejects_bounds(self):
        with pytest.raises(NumericError):
            logit(1.0)
        with pytest.raises(NumericError):
            logit(0.0)

    def test_tanh_matches_numpy(self):
        x = np.array([[-2.0, 0.5]])
        np.testing.assert_array_equal(tanh_(x), np.tanh(x))


@pytest.mark.unit
class TestHelpers:
    """Tests for coercion, finiteness and the gradient oracle."""

    def test_as_matrix_promotes_vectors(self):
        assert as_matrix([1, 2, 3]).shape == (3, 1)
        assert column([1.0, 2.0]).shape == (2, 1)

    def test_as_matrix_rejects_3d(self):
        with pytest.raises(ShapeError):
            as_matrix(np.zeros((2, 2, 2)))

    def test_check_finite(self):
        check_finite(np.ones((2, 2)), "ok")
        with pytest.raises(NumericError, match="logits"):
            check_finite(np.array([[math.nan]]), "logits")

    def test_fd_gradient_of_quadratic(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        x = np.array([[0.5], [-1.5]])

        def f(m: np.ndarray) -> float:
            return float((m.T @ a @ m)[0, 0])

        expected = (a + a.T) @ x
        np.testing.assert_allclose(fd_gradient(f, x), expected, atol=1e-8)

    def test_fd_gradient_rejects_nonpositive_step(self):
        with pytest.raises(NumericError):
            fd_gradient(lambda m: 0.0, np.zeros((1, 1)), h=0.0)

    def test_max_relative_error(self):
        assert max_relative_error(np.array([2.0]), np.array([2.0])) == 0.0
        assert max_relative_error(np.array([2.0]), np.array([1.0])) == pytest.approx(0.5)


@pytest.mark.unit
class TestRng:
    """Tests for seeded Philox streams."""

    def test_same_key_same_draws(self):
        np.testing.assert_array_equal(Rng(7, 1).random((4,)), Rng(7, 1).random((4,)))

    def test_streams_differ(self):
        assert not np.array_equal(Rng(7, 1).random((4,)), Rng(7, 2).random((4,)))

    def test_derive_matches_explicit_stream(self):
        np.testing.assert_array_equal(
            Rng(3, 5).derive(9).integers(0, 100, 6), Rng(3, 5, 9).integers(0, 100, 6)
        )

    def test_permutation_covers_range(self):
        assert sorted(Rng(0).permutation(10).tolist()) == list(range(10))

    def test_rejects_negative_seed(self):
        with pytest.raises(NumericError):
            Rng(-1)

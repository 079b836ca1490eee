# ABOUTME: Unit tests for model assembly, forward passes and parameter accounting
# ABOUTME: Tests padding invariance, dropout, skip-off equivalence and model size

import math

import numpy as np
import pytest
from pydantic import ValidationError

from qlrnn.config import ModelSpec
from qlrnn.errors import ConfigError, DataError, ShapeError
from qlrnn.network import (
    Model,
    backward,
    batch_targets,
    clamped_forget_model,
    closed_form_params,
    count_params,
    count_spec_params,
    forward,
    init_model,
    model_size_mb,
    model_tensor_shapes,
    reverse_index,
    zero_model,
)
from qlrnn.numerics import Rng
from qlrnn.training import cross_entropy

ARCHES = ["lstm", "gru", "bilstm", "ql_full", "psug_only", "hgr_only"]


@pytest.mark.unit
class TestModel:
    """Tests for the model container and initialization."""

    def test_tensor_order(self, tiny_spec):
        names = list(model_tensor_shapes(tiny_spec(arch="ql_full")))
        assert names == ["embedding", "cell.W", "cell.U", "cell.b", "skip.W_p", "skip.b_p", "head.W", "head.b"]

    def test_bilstm_tensor_prefixes(self, tiny_spec):
        names = list(model_tensor_shapes(tiny_spec(arch="bilstm")))
        assert names[1].startswith("fwd.") and names[13].startswith("bwd.")
        assert model_tensor_shapes(tiny_spec(arch="bilstm"))["head.W"] == (6, 2)

    def test_rejects_wrong_shapes(self, tiny_spec):
        model = zero_model(tiny_spec())
        with pytest.raises(ShapeError, match="cell.W"):
            model.with_tensors({"cell.W": np.zeros((3, 3))})

    def test_rejects_missing_tensor(self, tiny_spec):
        model = zero_model(tiny_spec())
        tensors = dict(model.tensors)
        del tensors["skip.b_p"]
        with pytest.raises(ShapeError, match="missing"):
            Model(model.spec, tensors)

    def test_init_is_seeded(self, tiny_spec):
        a = init_model(tiny_spec(), 4)
        b = init_model(tiny_spec(), 4)
        c = init_model(tiny_spec(), 5)
        for name in a.tensors:
            np.testing.assert_array_equal(a.tensors[name], b.tensors[name])
        assert not np.array_equal(a.tensors["cell.W"], c.tensors["cell.W"])

    def test_init_bounds_and_zero_biases(self, tiny_spec):
        model = init_model(tiny_spec(d_h=4), 0)
        assert np.all(np.abs(model.tensors["cell.U"]) <= 0.5)
        assert not model.tensors["cell.b"].any()

    def test_forget_bias_only_on_forget_slice(self, tiny_spec):
        model = init_model(tiny_spec(d_h=3), 0, forget_bias=1.0)
        b = model.tensors["cell.b"][:, 0]
        np.testing.assert_array_equal(b, [0, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0])
        assert model.init.forget_bias == 1.0

    def test_bilstm_lm_rejected(self):
        with pytest.raises(ValidationError, match="bilstm"):
            ModelSpec(arch="bilstm", task="lm")

    def test_bilstm_rejects_skip_settings(self):
        with pytest.raises(ValidationError, match="leap_interval"):
            ModelSpec(arch="bilstm", leap_interval=4)


@pytest.mark.unit
class TestForward:
    """Tests for forward passes."""

    @pytest.mark.parametrize("arch", ARCHES)
    def test_classify_logit_shape(self, tiny_model, arch):
        logits, _ = forward(tiny_model(arch=arch), np.array([[1, 2, 3, 4], [0, 1, 2, 3]]))
        assert logits.shape == (2, 2)

    def test_lm_logit_columns(self, tiny_model):
        logits, _ = forward(tiny_model(task="lm"), np.array([[1, 2, 3], [0, 1, 2]]))
        assert logits.shape == (5, 6)

    def test_single_sequence_accepts_1d(self, tiny_model):
        logits, _ = forward(tiny_model(), [1, 2, 3])
        assert logits.shape == (2, 1)

    @pytest.mark.parametrize("arch", ARCHES)
    @pytest.mark.parametrize("readout", ["final", "mean"])
    def test_padding_does_not_leak(self, tiny_model, arch, readout):
        model = tiny_model(seed=2, arch=arch, readout=readout)
        short = np.array([1, 4, 2, 0, 3])
        batch = np.array([[1, 4, 2, 0, 3, 4, 4, 4], [2, 2, 1, 3, 0, 1, 4, 2]])
        alone, _ = forward(model, short)
        together, _ = forward(model, batch, lengths=[5, 8])
        np.testing.assert_array_equal(together[:, :1], alone)

    def test_padding_does_not_leak_with_flush(self, tiny_model):
        model = tiny_model(seed=3, flush_partial=True)
        alone, _ = forward(model, [3, 1, 2, 2])
        together, _ = forward(model, [[3, 1, 2, 2, 0, 0, 0], [1, 1, 1, 1, 1, 1, 1]], lengths=[4, 7])
        np.testing.assert_array_equal(together[:, :1], alone)

    def test_lm_padding_does_not_leak(self, tiny_model):
        model = tiny_model(seed=4, task="lm")
        alone, _ = forward(model, [1, 2, 3])
        together, _ = forward(model, [[1, 2, 3, 0], [4, 4, 4, 4]], lengths=[3, 4])
        for t in range(3):
            np.testing.assert_array_equal(together[:, 2 * t], alone[:, t])

    def test_out_of_range_token(self, tiny_model):
        with pytest.raises(DataError, match="out of range"):
            forward(tiny_model(), [1, 9])

    def test_out_of_range_padding_is_ignored(self, tiny_model):
        forward(tiny_model(), [[1, 2, 99]], lengths=[2])

    def test_empty_sequence(self, tiny_model):
        with pytest.raises(DataError):
            forward(tiny_model(), np.zeros((1, 0), dtype=np.int64))
        with pytest.raises(DataError):
            forward(tiny_model(), [[1, 2]], lengths=[0])

    def test_train_mode_needs_rng_for_dropout(self, tiny_model):
        model = tiny_model(dropout=0.5)
        with pytest.raises(ConfigError, match="rng"):
            forward(model, [1, 2], mode="train")

    def test_dropout_only_in_train_mode(self, tiny_model):
        model = tiny_model(dropout=0.5)
        eval_a, _ = forward(model, [1, 2, 3])
        eval_b, _ = forward(model, [1, 2, 3])
        np.testing.assert_array_equal(eval_a, eval_b)
        train_a, _ = forward(model, [[1, 2, 3]] * 4, mode="train", rng=Rng(0, 2))
        train_b, _ = forward(model, [[1, 2, 3]] * 4, mode="train", rng=Rng(0, 2))
        np.testing.assert_array_equal(train_a, train_b)
        assert not np.array_equal(train_a, np.repeat(eval_a, 4, axis=1))

    def test_reverse_index_is_involution(self):
        idx = reverse_index(np.array([3, 5]), 5)
        np.testing.assert_array_equal(idx[:, 0], [2, 1, 0, 3, 4])
        np.testing.assert_array_equal(idx[:, 1], [4, 3, 2, 1, 0])
        np.testing.assert_array_equal(np.take_along_axis(idx, idx, axis=0), np.arange(5)[:, None] * [1, 1])


def psug_twin(model: Model) -> Model:
    spec = model.spec.model_copy(update={"arch": "psug_only"})
    tensors = {k: v for k, v in model.tensors.items() if not k.startswith("skip.")}
    return Model(spec, tensors)


@pytest.mark.unit
class TestSkipEquivalence:
    """ql_full reduces to psug_only when the skip cannot act."""

    @pytest.mark.parametrize("seed", range(5))
    def test_leap_longer_than_sequence(self, tiny_model, seed):
        model = tiny_model(seed=seed, leap_interval=50)
        tokens = np.random.default_rng(seed).integers(0, 5, size=(3, 9))
        a, _ = forward(model, tokens)
        b, _ = forward(psug_twin(model), tokens)
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("pooling", ["mean", "max", "mean_max"])
    def test_zero_projection(self, tiny_model, pooling):
        model = tiny_model(seed=1, leap_interval=2, pooling=pooling)
        model = model.with_tensors(
            {"skip.W_p": np.zeros_like(model.tensors["skip.W_p"]), "skip.b_p": np.zeros((3, 1))}
        )
        tokens = np.random.default_rng(1).integers(0, 5, size=(2, 9))
        a, _ = forward(model, tokens)
        b, _ = forward(psug_twin(model), tokens)
        np.testing.assert_array_equal(a, b)


@pytest.mark.unit
class TestBackward:
    """Tests for backward argument checks and targets."""

    def test_dlogits_shape_checked(self, tiny_model):
        model = tiny_model()
        logits, cache = forward(model, [1, 2])
        with pytest.raises(ShapeError, match="dlogits"):
            backward(model, cache, np.zeros((3, 1)))

    def test_cache_from_other_spec(self, tiny_model):
        logits, cache = forward(tiny_model(), [1, 2])
        with pytest.raises(ShapeError, match="spec"):
            backward(tiny_model(arch="psug_only"), cache, np.zeros_like(logits))

    def test_lm_targets_shift_and_mask(self, tiny_spec):
        spec = tiny_spec(task="lm")
        targets, mask = batch_targets(spec, [[1, 2, 3], [4, 0, 0]], [3, 1])
        # column t*B + b
        assert targets.tolist() == [2, 0, 3, 0, 0, 0]
        assert mask.tolist() == [True, False, True, False, False, False]

    def test_classify_targets_need_labels(self, tiny_spec):
        with pytest.raises(DataError):
            batch_targets(tiny_spec(), [[1, 2]], None)


@pytest.mark.unit
class TestCounting:
    """Tests for parameter counts and model size."""

    @pytest.mark.parametrize("arch", ARCHES)
    def test_enumerated_matches_allocated(self, tiny_spec, arch):
        spec = tiny_spec(arch=arch)
        assert count_spec_params(spec) == count_params(init_model(spec, 0)) == closed_form_params(spec)

    @pytest.mark.parametrize(
        ("arch", "expected"),
        [("lstm", 27_831_810), ("gru", 27_307_010), ("bilstm", 29_932_034)],
    )
    def test_reference_shapes(self, arch, expected):
        spec = ModelSpec(arch=arch, d_emb=512, d_h=512, vocab_size=50257, n_classes=2)
        assert count_spec_params(spec) == closed_form_params(spec) == expected

    def test_ql_full_is_psug_plus_skip(self):
        ql = ModelSpec(arch="ql_full", d_emb=16, d_h=8, pooling="mean_max")
        psug = ModelSpec(arch="psug_only", d_emb=16, d_h=8)
        assert count_spec_params(ql) - count_spec_params(psug) == 8 * 16 + 8

    def test_model_size(self):
        assert model_size_mb(27_831_810) == pytest.approx(106.17, abs=0.005)
        assert model_size_mb(27_831_810, 8) == pytest.approx(2 * model_size_mb(27_831_810))
        with pytest.raises(ConfigError):
            model_size_mb(10, 3)

    def test_clamped_model_rejects_zero(self, tiny_spec):
        with pytest.raises(ConfigError):
            clamped_forget_model(tiny_spec(), 0.0)


def scalar_logits(model: Model, tokens: list[int]) -> list[float]:
    """Embedding, LSTM-family recurrence, readout and head as plain float loops."""
    spec = model.spec
    t = model.tensors
    n, m = spec.d_h, spec.d_emb

    def pre(gate_index: int, j: int, x: list[float], h: list[float]) -> float:
        if spec.shared_gates:
            row = gate_index * n + j
            W, U, b = t["cell.W"], t["cell.U"], t["cell.b"]
        else:
            name = "ifog"[gate_index]
            row = j
            W, U, b = t[f"cell.W_{name}"], t[f"cell.U_{name}"], t[f"cell.b_{name}"]
        total = b[row, 0]
        for k in range(m):
            total += W[row, k] * x[k]
        for k in range(n):
            total += U[row, k] * h[k]
        return total

    def sig(v: float) -> float:
        return 1.0 / (1.0 + math.exp(-v))

    h, c = [0.0] * n, [0.0] * n
    history = []
    for tok in tokens:
        x = [t["embedding"][tok, k] for k in range(m)]
        gates = [[pre(g, j, x, h) for j in range(n)] for g in range(4)]
        c = [sig(gates[1][j]) * c[j] + sig(gates[0][j]) * math.tanh(gates[3][j]) for j in range(n)]
        h = [sig(gates[2][j]) * math.tanh(c[j]) for j in range(n)]
        history.append(h)
    if spec.readout == "mean":
        features = [sum(step[j] for step in history) / len(history) for j in range(n)]
    else:
        features = history[-1]
    return [
        t["head.b"][k, 0] + sum(t["head.W"][j, k] * features[j] for j in range(n))
        for k in range(spec.n_out)
    ]


@pytest.mark.unit
class TestModelOracle:
    """Whole-model forward and backward against independent expectations."""

    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize("arch", ["lstm", "psug_only"])
    @pytest.mark.parametrize("readout", ["final", "mean"])
    def test_forward_matches_scalar_loop(self, tiny_model, seed, arch, readout):
        model = tiny_model(seed=seed, arch=arch, readout=readout)
        tokens = np.random.default_rng(seed).integers(0, 5, size=7).tolist()
        logits, _ = forward(model, tokens)
        np.testing.assert_allclose(logits[:, 0], scalar_logits(model, tokens), rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("arch", ARCHES)
    def test_zero_model_single_step_gives_head_bias(self, tiny_spec, arch):
        bias = np.array([[0.25], [-1.5]])
        model = zero_model(tiny_spec(arch=arch)).with_tensors({"head.b": bias})
        logits, _ = forward(model, [3])
        np.testing.assert_array_equal(logits, bias)

    @pytest.mark.parametrize("arch", ARCHES)
    def test_zero_dlogits_give_zero_gradients(self, tiny_model, arch):
        model = tiny_model(seed=2, arch=arch)
        logits, cache = forward(model, [[1, 2, 3, 4, 0], [4, 3, 2, 0, 0]], [5, 3])
        grads = backward(model, cache, np.zeros_like(logits))
        for name, g in grads.tensors.items():
            np.testing.assert_array_equal(g, np.zeros_like(model.tensors[name]), err_msg=name)
        assert not np.any(grads.inputs)

    @pytest.mark.parametrize("pooling", ["mean", "max", "mean_max"])
    def test_zero_projection_gradients_match_psug(self, tiny_model, pooling):
        model = tiny_model(seed=4, leap_interval=2, pooling=pooling)
        model = model.with_tensors(
            {"skip.W_p": np.zeros_like(model.tensors["skip.W_p"]), "skip.b_p": np.zeros((3, 1))}
        )
        twin = psug_twin(model)
        tokens = np.random.default_rng(4).integers(0, 5, size=(2, 9))
        y = np.array([0, 1])
        grads = {}
        for key, m in (("ql", model), ("psug", twin)):
            logits, cache = forward(m, tokens)
            targets, mask = batch_targets(m.spec, tokens, None, y)
            _, dlogits = cross_entropy(logits, targets, mask)
            grads[key] = backward(m, cache, dlogits)
        for name, g in grads["psug"].tensors.items():
            np.testing.assert_allclose(grads["ql"].tensors[name], g, rtol=1e-12, atol=1e-15, err_msg=name)
        np.testing.assert_allclose(grads["ql"].inputs, grads["psug"].inputs, rtol=1e-12, atol=1e-15)

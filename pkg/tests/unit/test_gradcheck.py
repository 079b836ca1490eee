# ABOUTME: Finite-difference checks of the analytic BPTT gradients
# ABOUTME: Covers every architecture, skip variant and pooling method on small random instances

import numpy as np
import pytest

from qlrnn.network import Model, backward, batch_targets, forward
from qlrnn.numerics import fd_gradient, max_relative_error
from qlrnn.training import cross_entropy

CASES = [
    ("lstm", {}),
    ("gru", {}),
    ("bilstm", {}),
    ("psug_only", {}),
    *[
        (arch, {"skip_variant": variant, "pooling": pooling})
        for arch in ("ql_full", "hgr_only")
        for variant in ("summary", "carry")
        for pooling in ("mean", "max", "mean_max")
    ],
    ("ql_full", {"flush_partial": True}),
    ("ql_full", {"readout": "mean", "pooling": "max"}),
    ("hgr_only", {"flush_partial": True, "pooling": "mean_max"}),
    ("ql_full", {"task": "lm"}),
    ("lstm", {"task": "lm"}),
    ("gru", {"readout": "mean"}),
]


def case_id(case: tuple[str, dict]) -> str:
    arch, extra = case
    return "-".join([arch, *(f"{k}={v}" for k, v in extra.items())])


def batch_for(model: Model, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    tokens = rng.integers(0, model.spec.vocab_size, size=(2, 7))
    lengths = np.array([7, 5])
    labels = np.array([0, 1])
    return tokens, lengths, labels


def loss_of(model: Model, tokens, lengths, labels) -> float:
    logits, _ = forward(model, tokens, lengths)
    targets, mask = batch_targets(model.spec, tokens, lengths, labels)
    loss, _ = cross_entropy(logits, targets, mask)
    return loss


@pytest.mark.unit
class TestBpttGradients:
    """Analytic gradients agree with central differences."""

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("case", CASES, ids=[case_id(c) for c in CASES])
    def test_matches_finite_differences(self, tiny_model, case, seed):
        arch, extra = case
        model = tiny_model(seed=seed, arch=arch, **extra)
        tokens, lengths, labels = batch_for(model, seed)

        logits, cache = forward(model, tokens, lengths)
        targets, mask = batch_targets(model.spec, tokens, lengths, labels)
        _, dlogits = cross_entropy(logits, targets, mask)
        analytic = backward(model, cache, dlogits).tensors

        assert list(analytic) == list(model.tensors)
        for name, value in model.tensors.items():

            def f(m: np.ndarray, name: str = name) -> float:
                return loss_of(model.with_tensors({name: m}), tokens, lengths, labels)

            numeric = fd_gradient(f, value)
            assert max_relative_error(analytic[name], numeric) < 1e-4, name

    def test_input_gradients_match_embedding_rows(self, tiny_model):
        model = tiny_model(seed=11, arch="ql_full")
        tokens = np.array([[1, 1, 1, 1]])
        logits, cache = forward(model, tokens)
        _, dlogits = cross_entropy(logits, [1])
        grads = backward(model, cache, dlogits)
        np.testing.assert_allclose(
            grads.tensors["embedding"][1], grads.inputs[:, :, 0].sum(axis=0), atol=1e-12
        )
        assert not grads.tensors["embedding"][0].any()

# ABOUTME: Unit tests for classification, ROC-AUC, throughput and language-model metrics
# ABOUTME: Compares against brute-force confusion counts and the pairwise AUC definition

import json
import math
from typing import Any

import numpy as np
import pytest

from qlrnn.errors import DataError, NumericError, ShapeError, UndefinedMetricError
from qlrnn.metrics import (
    ConfusionCounts,
    EvalReport,
    classification_report,
    lm_metrics,
    roc_auc,
    throughput,
)


def pairwise_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def brute_force_scores(preds: list[int], labels: list[int], k: int) -> dict[str, Any]:
    """Per-class scores from hand-counted confusion cells."""
    out: dict[str, Any] = {"precision": [], "recall": [], "f1": []}
    out["accuracy"] = sum(1 for p, y in zip(preds, labels) if p == y) / len(labels)
    for c in range(k):
        tp = sum(1 for p, y in zip(preds, labels) if p == c and y == c)
        fp = sum(1 for p, y in zip(preds, labels) if p == c and y != c)
        fn = sum(1 for p, y in zip(preds, labels) if p != c and y == c)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        out["precision"].append(precision)
        out["recall"].append(recall)
        out["f1"].append(f1)
    return out


@pytest.mark.unit
class TestConfusion:
    """Tests for one-vs-rest confusion counts."""

    @pytest.mark.parametrize("seed", range(200))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(2, 5))
        n = int(rng.integers(1, 40))
        labels = rng.integers(0, k, n)
        preds = rng.integers(0, k, n)
        counts = ConfusionCounts.from_predictions(preds, labels, k)
        for c in range(k):
            assert counts.tp[c] == sum(1 for p, y in zip(preds, labels) if p == c and y == c)
            assert counts.fp[c] == sum(1 for p, y in zip(preds, labels) if p == c and y != c)
            assert counts.fn[c] == sum(1 for p, y in zip(preds, labels) if p != c and y == c)
            assert counts.tn[c] == sum(1 for p, y in zip(preds, labels) if p != c and y != c)

    def test_absent_class_scores_zero(self):
        report = classification_report([0, 0, 0], None, [0, 0, 1], n_classes=3)
        assert report.per_class[2].precision == 0.0
        assert report.per_class[2].f1 == 0.0
        assert report.per_class[2].support == 0


@pytest.mark.unit
class TestClassificationReport:
    """Tests for accuracy and macro scores."""

    def test_known_values(self):
        report = classification_report([1, 1, 0, 0], [0.9, 0.8, 0.3, 0.6], [1, 0, 0, 1])
        assert report.accuracy == 0.5
        assert report.macro_precision == pytest.approx(0.5, abs=1e-9)
        assert report.macro_recall == pytest.approx(0.5, abs=1e-9)
        assert report.roc_auc == pytest.approx(0.75)

    def test_all_one_class_predictions(self):
        report = classification_report([0, 0, 0, 0], None, [0, 1, 0, 1])
        assert report.accuracy == 0.5
        assert report.per_class[0].precision == pytest.approx(0.5, abs=1e-9)
        assert report.per_class[0].recall == pytest.approx(1.0, abs=1e-9)
        assert report.per_class[1].precision == pytest.approx(0.0, abs=1e-9)
        assert report.per_class[1].recall == 0.0
        assert report.macro_f1 == pytest.approx(1.0 / 3.0, abs=1e-9)

    @pytest.mark.parametrize("seed", range(1000))
    def test_matches_brute_force_scores(self, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(2, 5))
        n = int(rng.integers(1, 60))
        labels = rng.integers(0, k, n).tolist()
        preds = rng.integers(0, k, n).tolist()
        report = classification_report(preds, None, labels, n_classes=k)
        expected = brute_force_scores(preds, labels, k)
        assert report.accuracy == pytest.approx(expected["accuracy"], abs=1e-9)
        for c, scores in enumerate(report.per_class):
            assert scores.precision == pytest.approx(expected["precision"][c], abs=1e-9)
            assert scores.recall == pytest.approx(expected["recall"][c], abs=1e-9)
            assert scores.f1 == pytest.approx(expected["f1"][c], abs=1e-9)
        for name in ("precision", "recall", "f1"):
            macro = getattr(report, f"macro_{name}")
            assert macro == pytest.approx(sum(expected[name]) / k, abs=1e-9)

    def test_perfect(self):
        report = classification_report([0, 1, 1], [0.1, 0.9, 0.8], [0, 1, 1])
        assert report.accuracy == 1.0
        assert report.macro_f1 == pytest.approx(1.0, abs=1e-9)

    def test_single_class_leaves_auc_undefined(self):
        report = classification_report([1, 1], [0.4, 0.6], [1, 1])
        assert report.roc_auc is None
        assert "one class" in report.roc_auc_note
        assert report.accuracy == 1.0

    def test_multiclass_has_no_auc(self):
        report = classification_report([0, 1, 2], None, [0, 1, 2], n_classes=3)
        assert report.roc_auc is None
        assert report.roc_auc_note is not None

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            classification_report([0, 1], None, [0])

    def test_empty_and_out_of_range(self):
        with pytest.raises(DataError):
            classification_report([], None, [])
        with pytest.raises(DataError):
            classification_report([2], None, [0])

    def test_json_carries_every_field(self):
        report = classification_report([0, 1], [0.2, 0.7], [0, 1], loss=0.3, max_len=8)
        payload = json.loads(report.to_json())
        assert set(payload) == set(EvalReport.model_fields)
        assert payload["perplexity"] is None
        assert payload["loss"] == 0.3


@pytest.mark.unit
class TestRocAuc:
    """Tests for ROC-AUC against the pairwise definition."""

    @pytest.mark.parametrize("seed", range(1000))
    def test_matches_pairwise_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 30))
        labels = rng.integers(0, 2, n)
        labels[0], labels[1] = 0, 1
        scores = np.round(rng.random(n), 1)
        assert roc_auc(scores, labels) == pytest.approx(pairwise_auc(scores, labels), abs=1e-12)

    def test_single_class(self):
        with pytest.raises(UndefinedMetricError):
            roc_auc([0.1, 0.2], [0, 0])

    def test_non_binary_labels(self):
        with pytest.raises(DataError):
            roc_auc([0.1, 0.2], [0, 2])


@pytest.mark.unit
class TestThroughputAndLm:
    """Tests for throughput and language-model identities."""

    def test_tokens_are_examples_times_length(self):
        ex, tok = throughput(100, 64, 2.5)
        assert ex == 40.0
        assert tok == pytest.approx(ex * 64, rel=1e-9)

    def test_nonpositive_time(self):
        with pytest.raises(NumericError):
            throughput(1, 1, 0.0)

    @pytest.mark.parametrize("loss", [0.0, 1.0, 4.52, 6.51])
    def test_lm_identities(self, loss):
        scores = lm_metrics(loss, hits=3, n_tokens=4)
        assert scores.perplexity == pytest.approx(math.exp(loss), abs=1e-12, rel=1e-12)
        assert scores.bits_per_token == pytest.approx(loss / math.log(2.0), abs=1e-12)
        assert scores.token_accuracy == 0.75

    def test_reported_perplexity_rounding(self):
        assert round(lm_metrics(4.5158, 0, 1).perplexity, 2) == 91.45

    def test_lm_rejects_bad_input(self):
        with pytest.raises(NumericError):
            lm_metrics(math.nan, 0, 1)
        with pytest.raises(DataError):
            lm_metrics(1.0, 0, 0)

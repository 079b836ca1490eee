# ABOUTME: Classification, throughput and language-modeling metrics
# ABOUTME: EvalReport is a pydantic model serialized as JSON for CLI output and fixtures

"""Evaluation metrics.

Per-class precision, recall and F1 use an epsilon-guarded denominator, so
a class with no predictions or no support scores 0 rather than raising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Annotated, Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from sklearn.metrics import confusion_matrix, roc_auc_score

from qlrnn.errors import DataError, NumericError, ShapeError, UndefinedMetricError

if TYPE_CHECKING:
    from collections.abc import Sequence

EPS = 1e-12

Rate = Annotated[float, Field(ge=0.0, le=1.0)]


def _ints(a: np.ndarray) -> tuple[int, ...]:
    return tuple(int(v) for v in a)


@dataclass(frozen=True, slots=True)
class ConfusionCounts:
    """One-vs-rest counts per class."""

    tp: tuple[int, ...]
    fp: tuple[int, ...]
    fn: tuple[int, ...]
    tn: tuple[int, ...]
    n: int

    @classmethod
    def from_predictions(
        cls, preds: Sequence[int] | np.ndarray, labels: Sequence[int] | np.ndarray, n_classes: int
    ) -> ConfusionCounts:
        y_pred = np.asarray(preds, dtype=np.int64)
        y_true = np.asarray(labels, dtype=np.int64)
        cm = confusion_matrix(y_true, y_pred, labels=list(range(n_classes)))
        tp = np.diag(cm)
        fp = cm.sum(axis=0) - tp
        fn = cm.sum(axis=1) - tp
        n = int(cm.sum())
        tn = n - tp - fp - fn
        return cls(_ints(tp), _ints(fp), _ints(fn), _ints(tn), n)

    @property
    def n_classes(self) -> int:
        return len(self.tp)


class ClassScores(BaseModel):
    model_config = ConfigDict(frozen=True)

    label: int
    precision: Rate
    recall: Rate
    f1: Rate
    support: int = Field(ge=0)


class EvalReport(BaseModel):
    """Evaluation results; fields absent for a task are None."""

    model_config = ConfigDict(frozen=True)

    n_examples: int = Field(ge=0, description="Examples scored")
    accuracy: float | None = Field(default=None, ge=0.0, le=1.0)
    macro_precision: float | None = Field(default=None, ge=0.0, le=1.0)
    macro_recall: float | None = Field(default=None, ge=0.0, le=1.0)
    macro_f1: float | None = Field(default=None, ge=0.0, le=1.0)
    roc_auc: float | None = Field(default=None, ge=0.0, le=1.0)
    roc_auc_note: str | None = Field(default=None, description="Why roc_auc is missing")
    per_class: list[ClassScores] = Field(default_factory=list)
    loss: float | None = Field(default=None, ge=0.0, description="Mean negative log-likelihood")
    perplexity: float | None = None
    bits_per_token: float | None = None
    token_accuracy: float | None = Field(default=None, ge=0.0, le=1.0)
    n_tokens: int | None = None
    examples_per_sec: float | None = None
    tokens_per_sec: float | None = None
    max_len: int | None = Field(default=None, description="Truncation length used")

    def to_json(self) -> str:
        """Stable JSON document with every field, None included."""
        return self.model_dump_json(indent=2)


# =============================================================================
# Classification
# =============================================================================


def _per_class(counts: ConfusionCounts) -> list[ClassScores]:
    scores = []
    for c in range(counts.n_classes):
        tp, fp, fn = counts.tp[c], counts.fp[c], counts.fn[c]
        precision = tp / (tp + fp + EPS)
        recall = tp / (tp + fn + EPS)
        f1 = 2.0 * precision * recall / (precision + recall + EPS)
        scores.append(
            ClassScores(label=c, precision=precision, recall=recall, f1=f1, support=tp + fn)
        )
    return scores


def classification_report(
    preds: Sequence[int] | np.ndarray,
    pos_probs: Sequence[float] | np.ndarray | None,
    labels: Sequence[int] | np.ndarray,
    n_classes: int = 2,
    **extra: Any,
) -> EvalReport:
    """Accuracy, per-class and macro precision/recall/F1, and binary ROC-AUC.

    ROC-AUC is computed only for two classes with positive-class scores; a
    single-class label set leaves it None with a note.
    """
    y_pred = np.asarray(preds, dtype=np.int64)
    y_true = np.asarray(labels, dtype=np.int64)
    if y_pred.shape != y_true.shape:
        raise ShapeError("preds and labels differ in length", f"{y_pred.shape} vs {y_true.shape}")
    if y_true.size == 0:
        raise DataError("cannot score an empty set")
    if y_true.min() < 0 or max(y_true.max(), y_pred.max()) >= n_classes:
        raise DataError("class index outside [0, n_classes)", f"n_classes={n_classes}")

    counts = ConfusionCounts.from_predictions(y_pred, y_true, n_classes)
    per_class = _per_class(counts)
    accuracy = sum(counts.tp) / counts.n

    auc = None
    note = None
    if n_classes == 2 and pos_probs is not None:
        try:
            auc = roc_auc(pos_probs, y_true)
        except UndefinedMetricError as e:
            note = str(e)
    elif n_classes != 2:
        note = "roc_auc is reported for binary tasks only"

    k = float(n_classes)
    return EvalReport(
        n_examples=counts.n,
        accuracy=accuracy,
        macro_precision=sum(s.precision for s in per_class) / k,
        macro_recall=sum(s.recall for s in per_class) / k,
        macro_f1=sum(s.f1 for s in per_class) / k,
        roc_auc=auc,
        roc_auc_note=note,
        per_class=per_class,
        **extra,
    )


def roc_auc(pos_probs: Sequence[float] | np.ndarray, labels: Sequence[int] | np.ndarray) -> float:
    """Area under the ROC curve; ties between classes earn half credit."""
    scores = np.asarray(pos_probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if scores.shape != y.shape:
        raise ShapeError("scores and labels differ in length", f"{scores.shape} vs {y.shape}")
    present = set(np.unique(y).tolist())
    if not present <= {0, 1}:
        raise DataError("roc_auc needs binary 0/1 labels", f"got {sorted(present)}")
    if len(present) < 2:
        raise UndefinedMetricError("roc_auc is undefined", "only one class present in labels")
    return float(roc_auc_score(y, scores))


# =============================================================================
# Throughput and language modeling
# =============================================================================


def throughput(n_examples: int, seq_len: int, t_epoch: float) -> tuple[float, float]:
    """(examples per second, tokens per second) with tokens = examples * L."""
    if not t_epoch > 0.0:
        raise NumericError("elapsed time must be positive", f"t_epoch={t_epoch!r}")
    examples_per_sec = n_examples / t_epoch
    return examples_per_sec, examples_per_sec * seq_len


@dataclass(frozen=True, slots=True)
class LmScores:
    perplexity: float
    bits_per_token: float
    token_accuracy: float


def lm_metrics(loss: float, hits: int, n_tokens: int) -> LmScores:
    """Perplexity exp(loss), bits per token loss / ln 2, and hit rate."""
    if not math.isfinite(loss) or loss < 0.0:
        raise NumericError("language-model loss must be finite and non-negative", repr(loss))
    if n_tokens < 1:
        raise DataError("no target tokens to score")
    return LmScores(
        perplexity=math.exp(loss),
        bits_per_token=loss / math.log(2.0),
        token_accuracy=hits / n_tokens,
    )

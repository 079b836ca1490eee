# ABOUTME: Loss, optimizers, gradient clipping, evaluation and the epoch loop
# ABOUTME: Fixed-seed runs reproduce the same epoch records and final tensors bit for bit

"""Training for qlrnn models.

Shuffling and dropout draw from streams keyed on (seed, epoch, batch), so
a run is a pure function of its model, data and TrainConfig. Wall-clock
time is measured around each epoch and kept apart from the deterministic
metrics.
"""

from __future__ import annotations

import math
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np
import structlog

from qlrnn.data import Example, make_batches
from qlrnn.errors import DataError, NumericAbortError, ShapeError
from qlrnn.metrics import EvalReport, classification_report, lm_metrics, throughput
from qlrnn.network import DROPOUT_STREAM, Model, backward, batch_targets, forward
from qlrnn.numerics import FLOAT, IntArray, Matrix, Rng, sequential_sum

if TYPE_CHECKING:
    from qlrnn.config import ModelSpec, TrainConfig

logger = structlog.get_logger(__name__)

Params = dict[str, Matrix]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


# =============================================================================
# Loss
# =============================================================================


def token_nll(logits: Matrix, targets: Any) -> tuple[np.ndarray, Matrix]:
    """Per-column negative log-likelihood and softmax probabilities."""
    z = np.asarray(logits, dtype=FLOAT)
    if z.ndim == 1:
        z = z[:, None]
    y = np.asarray(targets, dtype=np.int64).reshape(-1)
    if y.shape[0] != z.shape[1]:
        raise ShapeError("one target per logit column", f"{y.shape[0]} vs {z.shape[1]}")
    if np.any(y < 0) or np.any(y >= z.shape[0]):
        raise DataError("target index out of range", f"classes={z.shape[0]}")
    shifted = z - z.max(axis=0, keepdims=True)
    exp = np.exp(shifted)
    total = sequential_sum(exp)
    log_total = np.log(total)
    cols = np.arange(z.shape[1])
    nll = log_total - shifted[y, cols]
    return nll, exp / total[None, :]


def cross_entropy(
    logits: Matrix, targets: Any, mask: np.ndarray | None = None
) -> tuple[float, Matrix]:
    """Mean negative log-likelihood over unmasked columns, and its logit gradient."""
    nll, probs = token_nll(logits, targets)
    y = np.asarray(targets, dtype=np.int64).reshape(-1)
    weights = np.ones(y.shape[0], dtype=FLOAT) if mask is None else np.asarray(mask, dtype=FLOAT)
    count = float(weights.sum())
    if count == 0.0:
        raise DataError("cross_entropy has no unmasked targets")
    loss = float(sequential_sum(nll * weights)) / count
    dlogits = probs.copy()
    dlogits[y, np.arange(y.shape[0])] -= 1.0
    dlogits *= weights[None, :] / count
    if np.asarray(logits).ndim == 1:
        dlogits = dlogits[:, 0]
    return loss, dlogits


# =============================================================================
# Optimizers
# =============================================================================


def _check_conform(params: Params, grads: Params) -> None:
    for name, p in params.items():
        g = grads.get(name)
        if g is None or g.shape != p.shape:
            raise ShapeError(
                f"gradient for {name} does not conform", f"{None if g is None else g.shape} vs {p.shape}"
            )


def sgd_step(params: Params, grads: Params, lr: float, weight_decay: float = 0.0) -> Params:
    """p <- p - lr * (g + wd * p)."""
    _check_conform(params, grads)
    return {name: p - lr * (grads[name] + weight_decay * p) for name, p in params.items()}


@dataclass(frozen=True, slots=True)
class AdamState:
    """First and second moments plus the number of steps taken."""

    m: Params
    v: Params
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Params) -> AdamState:
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: Params,
    grads: Params,
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> tuple[Params, AdamState]:
    """Bias-corrected Adam with decoupled weight decay."""
    _check_conform(params, grads)
    t = state.t + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new_params: Params = {}
    m_new: Params = {}
    v_new: Params = {}
    for name, p in params.items():
        g = grads[name]
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        new_params[name] = p - lr * (update + weight_decay * p)
        m_new[name] = m
        v_new[name] = v
    return new_params, AdamState(m_new, v_new, t)


def global_norm(grads: Params) -> float:
    squares = np.array([float(sequential_sum((g * g).reshape(-1))) for g in grads.values()])
    return math.sqrt(float(sequential_sum(squares))) if squares.size else 0.0


def clip_by_global_norm(grads: Params, max_norm: float) -> tuple[Params, float]:
    """Scale all gradients by max_norm / norm when the global L2 norm exceeds max_norm."""
    if not max_norm > 0.0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}, norm


# =============================================================================
# Evaluation
# =============================================================================


def evaluate(
    model: Model,
    examples: Sequence[Example],
    max_len: int,
    batch_size: int = 64,
) -> EvalReport:
    """Eval-mode metrics over examples in their given order."""
    if not examples:
        raise DataError("cannot evaluate an empty dataset")
    spec = model.spec
    nll_parts: list[float] = []
    counts: list[float] = []
    preds: list[np.ndarray] = []
    pos_probs: list[np.ndarray] = []
    labels: list[np.ndarray] = []
    hits = 0
    for batch in make_batches(examples, max_len, batch_size):
        logits, _ = forward(model, batch.tokens, batch.lengths, mode="eval")
        targets, mask = batch_targets(spec, batch.tokens, batch.lengths, batch.labels)
        nll, probs = token_nll(logits, targets)
        weights = mask.astype(FLOAT)
        nll_parts.append(float(sequential_sum(nll * weights)))
        counts.append(float(weights.sum()))
        predicted = np.argmax(probs, axis=0)
        if spec.task == "lm":
            hits += int(np.sum((predicted == targets) & mask))
        else:
            preds.append(predicted)
            labels.append(targets)
            if spec.n_classes == 2:
                pos_probs.append(probs[1])

    n_scored = float(sequential_sum(np.array(counts)))
    if n_scored == 0.0:
        raise DataError("no scorable targets", "every sequence is shorter than 2 tokens")
    loss = float(sequential_sum(np.array(nll_parts))) / n_scored
    if spec.task == "lm":
        n_tokens = int(n_scored)
        lm = lm_metrics(loss, hits, n_tokens)
        return EvalReport(
            n_examples=len(examples),
            loss=loss,
            perplexity=lm.perplexity,
            bits_per_token=lm.bits_per_token,
            token_accuracy=lm.token_accuracy,
            n_tokens=n_tokens,
            max_len=max_len,
        )
    return classification_report(
        np.concatenate(preds),
        np.concatenate(pos_probs) if pos_probs else None,
        np.concatenate(labels),
        n_classes=spec.n_classes,
        loss=loss,
        max_len=max_len,
    )


def selection_metric(report: EvalReport, name: str) -> float:
    """The early-stopping score of a report; token accuracy stands in for lm accuracy."""
    if name == "val_macro_f1":
        value = report.macro_f1
    else:
        value = report.accuracy if report.accuracy is not None else report.token_accuracy
    if value is None:
        raise DataError(f"{name} is undefined for this task")
    return value


# =============================================================================
# Epoch loop
# =============================================================================


@dataclass(frozen=True, slots=True)
class EpochRecord:
    """One epoch: deterministic metrics plus wall-clock timing."""

    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    val_macro_f1: float | None
    n_examples: int
    seq_len: int
    t_epoch: float
    examples_per_sec: float
    tokens_per_sec: float

    def metrics_fields(self) -> dict[str, Any]:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "val_acc": self.val_acc,
            "val_macro_f1": self.val_macro_f1,
            "n_examples": self.n_examples,
        }

    def timing_fields(self) -> dict[str, Any]:
        return {
            "epoch": self.epoch,
            "t_epoch": self.t_epoch,
            "examples_per_sec": self.examples_per_sec,
            "tokens_per_sec": self.tokens_per_sec,
        }


@dataclass(frozen=True)
class TrainResult:
    best_model: Model
    best_epoch: int
    best_metric: float
    records: list[EpochRecord] = field(default_factory=list)
    final_model: Model | None = None


def train_step(
    model: Model,
    tokens: Any,
    lengths: Any,
    labels: Any,
    cfg: TrainConfig,
    opt_state: AdamState | None,
    rng: Rng | None,
) -> tuple[Model, AdamState | None, float]:
    """Forward, backward, clip and one optimizer update on a batch."""
    logits, cache = forward(model, tokens, lengths, mode="train", rng=rng)
    targets, mask = batch_targets(model.spec, tokens, lengths, labels)
    loss, dlogits = cross_entropy(logits, targets, mask)
    if not math.isfinite(loss):
        raise NumericAbortError("training loss is not finite", f"loss={loss!r}")
    grads = backward(model, cache, dlogits).tensors
    if cfg.clip_norm is not None:
        grads, _ = clip_by_global_norm(grads, cfg.clip_norm)
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise NumericAbortError("non-finite gradient", f"loss={loss!r}")
    if cfg.optimizer == "sgd":
        params = sgd_step(model.tensors, grads, cfg.lr, cfg.weight_decay)
    else:
        state = opt_state if opt_state is not None else AdamState.zeros_like(model.tensors)
        params, opt_state = adam_step(model.tensors, grads, state, cfg.lr, cfg.weight_decay)
    return model.with_tensors(params), opt_state, loss


def _loss_weight(spec: ModelSpec, lengths: IntArray, size: int) -> int:
    """Targets one batch loss averages over: examples, or next-token positions for lm."""
    if spec.task == "lm":
        return int(np.maximum(lengths - 1, 0).sum())
    return size


def train_loop(
    model: Model,
    train_data: Sequence[Example],
    val_data: Sequence[Example],
    cfg: TrainConfig,
    on_epoch: Callable[[EpochRecord], None] | None = None,
    clock: Callable[[], float] = time.perf_counter,
) -> TrainResult:
    """Train for up to cfg.epochs, keeping the model with the best validation score.

    Args:
        model: Initial model.
        train_data: Training examples; reshuffled every epoch.
        val_data: Validation examples scored after every epoch.
        cfg: Optimization settings.
        on_epoch: Called with each EpochRecord as soon as it is complete.
        clock: Monotonic time source for epoch timing.

    Returns:
        TrainResult with the best model, its epoch and all epoch records.

    Raises:
        NumericAbortError: If a loss or gradient becomes non-finite.
    """
    if not train_data or not val_data:
        raise DataError("train_loop needs non-empty train and validation sets")
    opt_state: AdamState | None = None
    records: list[EpochRecord] = []
    best_model = model
    best_epoch = 0
    best_metric = -math.inf
    stale = 0

    for epoch in range(1, cfg.epochs + 1):
        batches = make_batches(train_data, cfg.max_len, cfg.batch_size, seed=cfg.seed, epoch=epoch)
        dropout = Rng(cfg.seed, DROPOUT_STREAM, epoch)
        losses: list[float] = []
        n_targets = 0
        start = clock()
        for index, batch in enumerate(batches):
            model, opt_state, loss = train_step(
                model, batch.tokens, batch.lengths, batch.labels, cfg, opt_state, dropout.derive(index)
            )
            weight = _loss_weight(model.spec, batch.lengths, batch.size)
            losses.append(loss * weight)
            n_targets += weight
        report = evaluate(model, val_data, cfg.max_len, cfg.batch_size)
        t_epoch = max(clock() - start, 1e-9)

        n_examples = len(train_data)
        ex_per_sec, tok_per_sec = throughput(n_examples, cfg.max_len, t_epoch)
        val_acc = report.accuracy if report.accuracy is not None else report.token_accuracy
        assert val_acc is not None and report.loss is not None
        record = EpochRecord(
            epoch=epoch,
            train_loss=float(sequential_sum(np.array(losses))) / n_targets,
            val_loss=report.loss,
            val_acc=val_acc,
            val_macro_f1=report.macro_f1,
            n_examples=n_examples,
            seq_len=cfg.max_len,
            t_epoch=t_epoch,
            examples_per_sec=ex_per_sec,
            tokens_per_sec=tok_per_sec,
        )
        records.append(record)
        if on_epoch is not None:
            on_epoch(record)
        logger.debug("epoch evaluated", epoch=epoch, val_acc=val_acc, val_loss=report.loss)

        metric = selection_metric(report, cfg.early_stop_metric)
        if metric > best_metric:
            best_model, best_epoch, best_metric = model, epoch, metric
            stale = 0
        else:
            stale += 1
            if cfg.patience is not None and stale >= cfg.patience:
                logger.info("early stop", epoch=epoch, best_epoch=best_epoch)
                break

    return TrainResult(best_model, best_epoch, best_metric, records, final_model=model)

# ABOUTME: Byte-level tokenization, JSONL datasets, seeded splits and padded batches
# ABOUTME: Synthetic long-range tasks (distant token, adding problem) stand in for real corpora

"""Datasets for qlrnn.

Token ids 0-255 are raw bytes and id 256 is padding, so byte-level data
needs ``vocab_size >= 257``. Truncation keeps the first ``max_len`` tokens
and padding goes on the right; true lengths travel with every batch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, StrictInt, StrictStr, ValidationError

from qlrnn.errors import ConfigError, DataError
from qlrnn.numerics import IntArray, Rng

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence
    from pathlib import Path

    from qlrnn.config import DataConfig

logger = structlog.get_logger(__name__)

PAD_ID = 256
BYTE_VOCAB = 257

SPLIT_STREAM = 11
SHUFFLE_STREAM = 12
DISTANT_STREAM = 13
ADDING_STREAM = 14

# Adding-problem values are quantized to q / ADDING_LEVELS.
ADDING_LEVELS = 45
ADDING_PLAIN_BASE = 32
ADDING_MARKED_BASE = 80


# =============================================================================
# Records
# =============================================================================


@dataclass(frozen=True, slots=True)
class Example:
    """One sequence; ``meta`` carries generator records for oracle checks."""

    tokens: tuple[int, ...]
    label: int | None = None
    raw_text: str | None = None
    meta: dict[str, Any] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not self.tokens:
            raise DataError("example has no tokens")


@dataclass(frozen=True, slots=True)
class Batch:
    """Rows padded or truncated to exactly max_len, with true lengths."""

    tokens: IntArray
    lengths: IntArray
    labels: IntArray | None

    @property
    def size(self) -> int:
        return int(self.tokens.shape[0])


class JsonlRecord(BaseModel):
    """One dataset line."""

    model_config = ConfigDict(extra="ignore")

    text: StrictStr = Field(description="Raw text, tokenized byte by byte")
    label: StrictInt = Field(ge=0, description="Class index")


# =============================================================================
# Tokenization
# =============================================================================


def tokenize_bytes(text: str | bytes) -> list[int]:
    """One id per byte; strings are UTF-8 encoded with no normalization."""
    raw = text if isinstance(text, bytes) else text.encode("utf-8", errors="surrogateescape")
    return list(raw)


def detokenize_bytes(ids: Iterable[int]) -> bytes:
    """Inverse of tokenize_bytes; padding ids are dropped."""
    return bytes(i for i in ids if i != PAD_ID)


def decode_text(ids: Iterable[int]) -> str:
    return detokenize_bytes(ids).decode("utf-8", errors="surrogateescape")


def check_vocab(examples: Sequence[Example], vocab_size: int, n_classes: int | None = None) -> None:
    """Reject token ids or labels the model cannot represent."""
    for index, ex in enumerate(examples):
        top = max(ex.tokens)
        if top >= vocab_size or min(ex.tokens) < 0:
            raise DataError(
                "token id outside model vocabulary",
                f"example {index} has id {top}, vocab_size={vocab_size}",
            )
        if n_classes is not None and ex.label is not None and ex.label >= n_classes:
            raise DataError(
                "label outside model classes",
                f"example {index} has label {ex.label}, n_classes={n_classes}",
            )


# =============================================================================
# Splitting and batching
# =============================================================================


def split_train_val(
    examples: Sequence[Example], ratio: float = 0.8, seed: int = 0
) -> tuple[list[Example], list[Example]]:
    """Seeded shuffle, then a prefix split with round(ratio * n) training examples."""
    n = len(examples)
    if n < 2:
        raise DataError("need at least 2 examples to split", f"got {n}")
    if not 0.0 < ratio < 1.0:
        raise ConfigError("train_ratio must lie in (0, 1)", f"got {ratio}")
    n_train = min(max(round(ratio * n), 1), n - 1)
    order = Rng(seed, SPLIT_STREAM).permutation(n)
    train = [examples[i] for i in order[:n_train]]
    val = [examples[i] for i in order[n_train:]]
    return train, val


def pad_batch(examples: Sequence[Example], max_len: int, pad_id: int = PAD_ID) -> Batch:
    if max_len < 1:
        raise ConfigError("max_len must be >= 1", f"got {max_len}")
    tokens = np.full((len(examples), max_len), pad_id, dtype=np.int64)
    lengths = np.zeros(len(examples), dtype=np.int64)
    for row, ex in enumerate(examples):
        kept = ex.tokens[:max_len]
        tokens[row, : len(kept)] = kept
        lengths[row] = len(kept)
    labels = None
    if examples and all(ex.label is not None for ex in examples):
        labels = np.array([ex.label for ex in examples], dtype=np.int64)
    return Batch(tokens=tokens, lengths=lengths, labels=labels)


def make_batches(
    examples: Sequence[Example],
    max_len: int,
    batch_size: int,
    pad_id: int = PAD_ID,
    seed: int | None = None,
    epoch: int = 0,
) -> list[Batch]:
    """Cut examples into padded batches; the last batch may be smaller.

    With a seed the order is shuffled by a stream keyed on (seed, epoch);
    without one the input order is kept.
    """
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1", f"got {batch_size}")
    order = np.arange(len(examples))
    if seed is not None:
        order = Rng(seed, SHUFFLE_STREAM, epoch).permutation(len(examples))
    batches = []
    for start in range(0, len(examples), batch_size):
        chunk = [examples[i] for i in order[start : start + batch_size]]
        batches.append(pad_batch(chunk, max_len, pad_id))
    return batches


# =============================================================================
# Synthetic tasks
# =============================================================================


def _balanced_labels(rng: Rng, n: int, n_classes: int) -> list[int]:
    labels = np.arange(n) % n_classes
    return [int(labels[i]) for i in rng.permutation(n)]


def gen_distant_token_task(
    n: int, L: int, gap: int, seed: int, n_classes: int = 2
) -> list[Example]:
    """Noise letters a-z with one class marker ('A' + class) at position L - 1 - gap.

    The label is read at the last position, so the marker must survive
    ``gap`` steps of noise.
    """
    if not 0 <= gap < L:
        raise DataError("gap must satisfy 0 <= gap < L", f"gap={gap} L={L}")
    if not 2 <= n_classes <= 26:
        raise DataError("distant-token task supports 2 to 26 classes", f"got {n_classes}")
    rng = Rng(seed, DISTANT_STREAM)
    labels = _balanced_labels(rng, n, n_classes)
    pos = L - 1 - gap
    examples = []
    for i, label in enumerate(labels):
        noise = rng.derive(i).integers(ord("a"), ord("z") + 1, L)
        tokens = [int(t) for t in noise]
        tokens[pos] = ord("A") + label
        examples.append(
            Example(
                tokens=tuple(tokens),
                label=label,
                raw_text=bytes(tokens).decode("ascii"),
                meta={"marker_pos": pos, "marker": tokens[pos]},
            )
        )
    logger.debug("generated distant-token task", n=n, seq_len=L, gap=gap)
    return examples


def adding_label(a: float, b: float) -> int:
    """1 when the two marked values sum to more than 1.0."""
    return int(a + b > 1.0)


def gen_adding_problem(n: int, L: int, seed: int) -> list[Example]:
    """Adding problem as binary classification.

    Every position holds a value q / 45 encoded as byte 32 + q, or 80 + q
    when marked. One mark falls in each half; labels are balanced by
    redrawing sequences until they match a pre-shuffled label list.
    """
    if L < 2:
        raise DataError("adding problem needs L >= 2", f"L={L}")
    rng = Rng(seed, ADDING_STREAM)
    targets = _balanced_labels(rng, n, 2)
    half = L // 2
    examples = []
    for i, target in enumerate(targets):
        draw = rng.derive(i)
        while True:
            q = np.rint(draw.random((L,)) * ADDING_LEVELS).astype(np.int64)
            first = int(draw.integers(0, half, 1)[0])
            second = int(draw.integers(half, L, 1)[0])
            a, b = q[first] / ADDING_LEVELS, q[second] / ADDING_LEVELS
            if adding_label(a, b) == target:
                break
        tokens = [ADDING_PLAIN_BASE + int(v) for v in q]
        tokens[first] = ADDING_MARKED_BASE + int(q[first])
        tokens[second] = ADDING_MARKED_BASE + int(q[second])
        examples.append(
            Example(
                tokens=tuple(tokens),
                label=target,
                raw_text=bytes(tokens).decode("ascii"),
                meta={"positions": (first, second), "values": (float(a), float(b))},
            )
        )
    logger.debug("generated adding problem", n=n, seq_len=L)
    return examples


# =============================================================================
# JSONL
# =============================================================================


def load_jsonl(path: Path) -> list[Example]:
    """Load ``{"text": str, "label": int}`` lines in order; errors name the line."""
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise DataError(f"cannot read dataset {path}", str(e)) from e
    examples = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataError(f"{path}: line {lineno}: invalid JSON", e.msg) from e
        try:
            record = JsonlRecord.model_validate(payload)
        except ValidationError as e:
            problems = "; ".join(
                f"{'.'.join(str(p) for p in err['loc']) or 'record'}: {err['msg']}"
                for err in e.errors()
            )
            raise DataError(f"{path}: line {lineno}: invalid record", problems) from e
        try:
            tokens = tokenize_bytes(record.text)
        except UnicodeEncodeError as e:
            raise DataError(f"{path}: line {lineno}: text is not encodable as UTF-8", e.reason) from e
        if not tokens:
            raise DataError(f"{path}: line {lineno}: empty text")
        examples.append(Example(tokens=tuple(tokens), label=record.label, raw_text=record.text))
    if not examples:
        raise DataError(f"dataset {path} has no examples")
    logger.info("dataset loaded", path=str(path), n_examples=len(examples))
    return examples


def write_jsonl(path: Path, examples: Iterable[Example]) -> int:
    """Write examples as JSONL; returns the number of lines written."""
    count = 0
    with path.open("w", encoding="utf-8") as f:
        for ex in examples:
            text = ex.raw_text if ex.raw_text is not None else decode_text(ex.tokens)
            f.write(json.dumps({"text": text, "label": ex.label}) + "\n")
            count += 1
    return count


def load_examples(cfg: DataConfig, n_classes: int, seed: int) -> list[Example]:
    """Examples for a run: a JSONL file or one of the synthetic generators."""
    if cfg.data_path is not None:
        return load_jsonl(cfg.data_path)
    if cfg.synthetic == "distant_token":
        return gen_distant_token_task(cfg.n_examples, cfg.seq_len, cfg.gap, seed, n_classes)
    if cfg.synthetic == "adding":
        return gen_adding_problem(cfg.n_examples, cfg.seq_len, seed)
    raise ConfigError("no data source configured", "set data_path or synthetic")

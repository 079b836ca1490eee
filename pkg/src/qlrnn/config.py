# ABOUTME: Configuration management for qlrnn runs
# ABOUTME: Flat key = value run files validated by pydantic, process settings from environment

"""Configuration management using pydantic and pydantic-settings.

A run file is a flat list of ``key = value`` lines. Each key belongs to
exactly one section model (ModelSpec, TrainConfig, DataConfig,
RunOptions); unknown or duplicated keys are rejected and every validation
failure is reported by key name before anything is built.
"""

from __future__ import annotations

import os
from pathlib import Path  # noqa: TC003 - Required at runtime for Pydantic
from typing import Annotated, Any, Literal

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)
from pydantic_settings import BaseSettings, SettingsConfigDict

from qlrnn.errors import ConfigError, SpecError

Arch = Literal["lstm", "gru", "bilstm", "ql_full", "psug_only", "hgr_only"]
Pooling = Literal["mean", "max", "mean_max"]
SkipVariant = Literal["summary", "carry"]
Task = Literal["classify", "lm"]

ARCHES: tuple[str, ...] = ("lstm", "gru", "bilstm", "ql_full", "psug_only", "hgr_only")
SKIP_KEYS: tuple[str, ...] = ("leap_interval", "pooling", "skip_variant", "flush_partial")

_NONE_WORDS = {"", "none", "null", "off"}


def _none_if_blank(v: Any) -> Any:
    if isinstance(v, str) and v.strip().lower() in _NONE_WORDS:
        return None
    return v


def _split_list(v: Any) -> Any:
    if isinstance(v, str):
        return [item.strip() for item in v.split(",") if item.strip()]
    return v


# =============================================================================
# Model specification
# =============================================================================


class ModelSpec(BaseModel):
    """Architecture and shape hyperparameters of one model."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    arch: Arch = Field(default="ql_full", description="Recurrent architecture tag")
    d_emb: int = Field(default=512, ge=1, description="Token embedding dimension (cell input d_x)")
    d_h: int = Field(default=512, ge=1, description="Hidden state dimension")
    leap_interval: int = Field(default=16, ge=1, description="Block length K between skips")
    pooling: Pooling = Field(default="mean", description="Block pooling method")
    skip_variant: SkipVariant = Field(default="summary", description="HGR-ASC mechanism")
    vocab_size: int = Field(default=257, ge=2, description="Token vocabulary size")
    n_classes: int = Field(default=2, ge=1, description="Classification head width")
    dropout: float = Field(default=0.1, ge=0.0, lt=1.0, description="Recurrent-output dropout")
    task: Task = Field(default="classify", description="classify or next-token lm")
    readout: Literal["final", "mean"] = Field(
        default="final", description="Classification readout over hidden states"
    )
    flush_partial: bool = Field(
        default=False, description="Pool the trailing partial block at sequence end"
    )

    @model_validator(mode="after")
    def check_combinations(self) -> ModelSpec:
        """Reject combinations no architecture defines."""
        if self.task == "classify" and self.n_classes < 2:
            raise ValueError("n_classes must be >= 2 for task=classify")
        if self.arch == "bilstm":
            explicit = sorted(set(SKIP_KEYS) & self.model_fields_set)
            if explicit:
                raise ValueError(f"skip settings {explicit} are not valid for arch=bilstm")
            if self.task == "lm":
                raise ValueError("arch=bilstm reads future tokens and cannot run task=lm")
        return self

    @property
    def has_skip(self) -> bool:
        """True when the HGR-ASC block machinery runs."""
        return self.arch in ("ql_full", "hgr_only")

    @property
    def uses_summary(self) -> bool:
        """True when the skip carries a projected block summary (W_p present)."""
        return self.has_skip and self.skip_variant == "summary"

    @property
    def shared_gates(self) -> bool:
        """True when gates come from one stacked PSUG transform."""
        return self.arch in ("ql_full", "psug_only")

    @property
    def pool_width(self) -> int:
        return 2 * self.d_h if self.pooling == "mean_max" else self.d_h

    @property
    def h_out(self) -> int:
        """Width of the recurrent output fed to the head."""
        return 2 * self.d_h if self.arch == "bilstm" else self.d_h

    @property
    def n_out(self) -> int:
        """Head output width."""
        return self.vocab_size if self.task == "lm" else self.n_classes

    def with_arch(self, arch: str) -> ModelSpec:
        """Same dimensions under another architecture tag (validated)."""
        values = self.model_dump(exclude_unset=True)
        values["arch"] = arch
        if arch == "bilstm":
            for key in SKIP_KEYS:
                values.pop(key, None)
        try:
            return ModelSpec(**values)
        except ValidationError as e:
            raise SpecError(f"invalid spec for arch={arch}", _format_errors(e)) from e


# =============================================================================
# Training, data and run options
# =============================================================================


class TrainConfig(BaseModel):
    """Optimization settings for train_loop."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    lr: float = Field(default=3e-4, gt=0.0, description="Learning rate")
    weight_decay: float = Field(default=0.0, ge=0.0, description="Weight decay coefficient")
    batch_size: int = Field(default=32, ge=1, description="Examples per optimizer step")
    max_len: int = Field(default=256, ge=1, description="Truncation/padding length")
    epochs: int = Field(default=5, ge=1, description="Maximum epochs")
    optimizer: Literal["sgd", "adam"] = Field(default="adam", description="Update rule")
    clip_norm: float | None = Field(default=5.0, gt=0.0, description="Global-norm clip or none")
    seed: int = Field(default=0, ge=0, lt=2**64, description="Seed for init, shuffling, dropout")
    early_stop_metric: Literal["val_macro_f1", "val_acc"] = Field(
        default="val_macro_f1", description="Validation metric selecting the best epoch"
    )
    patience: int | None = Field(
        default=None, ge=1, description="Stop after this many epochs without improvement"
    )
    forget_bias: float = Field(default=0.0, description="Initial offset added to b_f")

    @field_validator("clip_norm", "patience", mode="before")
    @classmethod
    def blank_to_none(cls, v: Any) -> Any:
        return _none_if_blank(v)


class DataConfig(BaseModel):
    """Where examples come from."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    data_path: Path | None = Field(default=None, description="JSONL dataset path")
    synthetic: Literal["distant_token", "adding"] | None = Field(
        default=None, description="Synthetic task generator"
    )
    n_examples: int = Field(default=2500, ge=2, description="Synthetic dataset size")
    seq_len: int = Field(default=64, ge=2, description="Synthetic sequence length")
    gap: int = Field(default=48, ge=0, description="Marker distance for distant_token")
    data_seed: int | None = Field(default=None, ge=0, description="Generator/split seed")
    train_ratio: float = Field(default=0.8, gt=0.0, lt=1.0, description="Train share of split")
    eval_split: Literal["val", "train", "all"] = Field(
        default="val", description="Split scored by eval"
    )

    @field_validator("data_path", "synthetic", "data_seed", mode="before")
    @classmethod
    def blank_to_none(cls, v: Any) -> Any:
        return _none_if_blank(v)

    @model_validator(mode="after")
    def check_generator(self) -> DataConfig:
        if self.synthetic == "distant_token" and self.gap >= self.seq_len:
            raise ValueError("gap must be smaller than seq_len")
        return self


class RunOptions(BaseModel):
    """Per-command options that do not shape the model or its training."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    out_dir: Path | None = Field(default=None, description="Output directory for artifacts")
    bench_archs: list[Arch] = Field(default_factory=list, description="Archs timed by bench")
    bench_examples: int = Field(default=64, ge=1, description="Examples timed per arch")
    bench_backward: bool = Field(default=True, description="Time backward passes too")
    gradflow_len: int = Field(default=32, ge=1, description="Sequence length for gradflow")
    clamp_forget: float | None = Field(
        default=None, gt=0.0, le=1.0, description="Clamped forget value; 1.0 saturates via +50"
    )
    gradflow_fd: bool = Field(default=False, description="Add finite-difference column")
    gradflow_loss: bool = Field(default=False, description="Add the loss_grad column")
    eval_max_lens: list[Annotated[int, Field(ge=1)]] = Field(
        default_factory=list, description="Truncation lengths swept by eval"
    )

    @field_validator("out_dir", "clamp_forget", mode="before")
    @classmethod
    def blank_to_none(cls, v: Any) -> Any:
        return _none_if_blank(v)

    @field_validator("bench_archs", "eval_max_lens", mode="before")
    @classmethod
    def comma_list(cls, v: Any) -> Any:
        return _split_list(v)


class RunConfig(BaseModel):
    """Complete run configuration: one section model per concern."""

    model_config = ConfigDict(frozen=True)

    model: ModelSpec = Field(default_factory=ModelSpec)
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    run: RunOptions = Field(default_factory=RunOptions)

    @property
    def split_seed(self) -> int:
        return self.data.data_seed if self.data.data_seed is not None else self.train.seed


SECTIONS: dict[str, type[BaseModel]] = {
    "model": ModelSpec,
    "train": TrainConfig,
    "data": DataConfig,
    "run": RunOptions,
}


def _section_of(key: str) -> str | None:
    for name, section in SECTIONS.items():
        if key in section.model_fields:
            return name
    return None


def _format_errors(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "config"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


# =============================================================================
# Parsing
# =============================================================================


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'", repr(raw))
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key", key)
        values[key] = value
    return values


def build_run_config(values: dict[str, Any]) -> RunConfig:
    """Route flat keys to their sections and validate everything at once."""
    grouped: dict[str, dict[str, Any]] = {name: {} for name in SECTIONS}
    unknown = []
    for key, value in values.items():
        section = _section_of(key)
        if section is None:
            unknown.append(key)
        else:
            grouped[section][key] = value
    if unknown:
        raise ConfigError("unknown config keys", ", ".join(sorted(unknown)))

    built: dict[str, BaseModel] = {}
    problems: list[str] = []
    for name, section in SECTIONS.items():
        try:
            built[name] = section.model_validate(grouped[name])
        except ValidationError as e:
            problems.append(_format_errors(e))
    if problems:
        raise ConfigError("invalid configuration", "; ".join(problems))

    cfg = RunConfig(**built)  # type: ignore[arg-type]
    _check_cross_section(cfg)
    return cfg


def _check_cross_section(cfg: RunConfig) -> None:
    if cfg.model.task == "lm" and cfg.train.early_stop_metric == "val_macro_f1":
        raise ConfigError("early_stop_metric: val_macro_f1 is undefined for task=lm")
    if cfg.data.data_path is not None and cfg.data.synthetic is not None:
        raise ConfigError("data_path and synthetic are mutually exclusive")
    if cfg.data.synthetic is not None and cfg.model.vocab_size < 257:
        raise ConfigError("vocab_size: byte-level data needs vocab_size >= 257")
    if cfg.data.synthetic == "adding" and cfg.model.task == "classify" and cfg.model.n_classes != 2:
        raise ConfigError("n_classes: the adding task is binary")


def load_run_config(path: Path, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Read a run file, apply CLI overrides and validate."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}", str(e)) from e
    values: dict[str, Any] = dict(parse_config_text(text, source=str(path)))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return build_run_config(values)


# =============================================================================
# Process settings
# =============================================================================


class AppSettings(BaseSettings):
    """Process-wide settings read from QLRNN_* environment variables."""

    model_config = SettingsConfigDict(env_prefix="QLRNN_", extra="ignore")

    log_level: Annotated[str, Field(pattern=r"^(DEBUG|INFO|WARNING|ERROR|CRITICAL)$")] = Field(
        default="INFO", description="Logging level"
    )
    log_format: Literal["console", "json", "kv"] = Field(
        default="console", description="structlog renderer"
    )


def load_settings() -> AppSettings:
    """
    Load settings from environment with validation.

    Optionally reads from .env file if QLRNN_ENV_FILE is set.
    """
    return AppSettings(_env_file=os.environ.get("QLRNN_ENV_FILE"))  # type: ignore[call-arg]

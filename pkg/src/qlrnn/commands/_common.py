# ABOUTME: Options and config loading shared by every qlrnn subcommand
# ABOUTME: Applies --seed/--data/--out overrides and sets the run id for log correlation

"""Shared subcommand plumbing."""

from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING, Any

import structlog

from qlrnn.config import RunConfig, load_run_config
from qlrnn.errors import ConfigError
from qlrnn.utils.logging import derive_run_id, set_run_id

if TYPE_CHECKING:
    import argparse

logger = structlog.get_logger(__name__)

DEFAULT_OUT_DIR = Path("qlrnn-out")
CHECKPOINT_NAME = "best.ckpt.json"


def add_run_options(parser: argparse.ArgumentParser) -> None:
    """Options every subcommand accepts."""
    parser.add_argument("--config", type=Path, required=True, help="Run configuration file")
    parser.add_argument("--checkpoint", type=Path, default=None, help="Checkpoint to load")
    parser.add_argument("--data", type=Path, default=None, help="JSONL dataset (overrides config)")
    parser.add_argument("--out", type=Path, default=None, help="Output directory (overrides config)")
    parser.add_argument("--seed", type=int, default=None, help="Seed (overrides config)")


def load_command_config(args: argparse.Namespace, command: str) -> RunConfig:
    """Load the run file with CLI overrides and tag this invocation's logs."""
    overrides: dict[str, Any] = {"seed": args.seed, "out_dir": args.out}
    if args.data is not None:
        overrides["data_path"] = args.data
        overrides["synthetic"] = "none"
    cfg = load_run_config(args.config, overrides)
    set_run_id(derive_run_id(command, cfg.train.seed))
    logger.info("config loaded", command=command, config=str(args.config), arch=cfg.model.arch)
    return cfg


def out_dir(cfg: RunConfig) -> Path:
    return cfg.run.out_dir if cfg.run.out_dir is not None else DEFAULT_OUT_DIR


def resolve_checkpoint(args: argparse.Namespace, cfg: RunConfig) -> Path:
    if args.checkpoint is not None:
        return Path(args.checkpoint)
    candidate = out_dir(cfg) / CHECKPOINT_NAME
    if not candidate.exists():
        raise ConfigError("no checkpoint given", f"pass --checkpoint or train into {out_dir(cfg)}")
    return candidate


def write_artifact(cfg: RunConfig, name: str, text: str) -> Path | None:
    """Write text under the configured output directory, if one is set."""
    if cfg.run.out_dir is None:
        return None
    cfg.run.out_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.run.out_dir / name
    path.write_text(text, encoding="utf-8")
    return path

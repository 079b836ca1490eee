# ABOUTME: `qlrnn eval` - score a checkpoint on a dataset split in eval mode
# ABOUTME: Optionally sweeps several truncation lengths in one run

"""Eval subcommand."""

from __future__ import annotations

import json
from typing import TYPE_CHECKING

import structlog

from qlrnn.checkpoint import load_checkpoint
from qlrnn.commands._common import (
    add_run_options,
    load_command_config,
    resolve_checkpoint,
    write_artifact,
)
from qlrnn.data import Example, check_vocab, load_examples, split_train_val
from qlrnn.errors import EXIT_OK, DataError
from qlrnn.training import evaluate

if TYPE_CHECKING:
    import argparse

    from qlrnn.config import RunConfig

logger = structlog.get_logger(__name__)


def select_split(cfg: RunConfig, examples: list[Example]) -> list[Example]:
    """The examples `eval` scores, reproducing the training split."""
    if cfg.data.eval_split == "all":
        return examples
    train, val = split_train_val(examples, cfg.data.train_ratio, cfg.split_seed)
    return train if cfg.data.eval_split == "train" else val


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = load_command_config(args, "eval")
    model, meta = load_checkpoint(resolve_checkpoint(args, cfg))
    spec = model.spec
    if spec != cfg.model:
        logger.warning("config model differs from checkpoint; using checkpoint spec")

    examples = load_examples(cfg.data, spec.n_classes, cfg.split_seed)
    try:
        check_vocab(examples, spec.vocab_size, spec.n_classes if spec.task == "classify" else None)
    except DataError as e:
        raise DataError("dataset does not match checkpoint spec", str(e)) from e
    scored = select_split(cfg, examples)

    lengths = cfg.run.eval_max_lens or [cfg.train.max_len]
    reports = [evaluate(model, scored, max_len, cfg.train.batch_size) for max_len in lengths]
    for report in reports:
        if report.roc_auc is None and report.roc_auc_note:
            logger.warning("roc_auc undefined", reason=report.roc_auc_note)

    if len(reports) == 1:
        text = reports[0].to_json()
    else:
        text = json.dumps([r.model_dump(mode="json") for r in reports], indent=2)
    print(text)
    write_artifact(cfg, f"eval_{cfg.data.eval_split}.json", text + "\n")
    logger.info(
        "evaluation finished",
        split=cfg.data.eval_split,
        n_examples=len(scored),
        best_epoch=meta.get("best_epoch"),
    )
    return EXIT_OK


def register_eval_command(subparsers: argparse._SubParsersAction[argparse.ArgumentParser]) -> None:
    """Add the `eval` subparser."""
    parser = subparsers.add_parser("eval", help="Evaluate a checkpoint")
    add_run_options(parser)
    parser.set_defaults(handler=cmd_eval)

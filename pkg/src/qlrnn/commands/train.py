# ABOUTME: `qlrnn train` - fit a model, keep the best epoch, write checkpoint and reports
# ABOUTME: metrics.log lines are deterministic; timings go to timings.log

"""Train subcommand."""

from __future__ import annotations

from typing import TYPE_CHECKING

import structlog

from qlrnn.checkpoint import save_checkpoint
from qlrnn.commands._common import CHECKPOINT_NAME, add_run_options, load_command_config, out_dir
from qlrnn.data import check_vocab, load_examples, split_train_val
from qlrnn.errors import EXIT_OK
from qlrnn.network import init_model
from qlrnn.training import EpochRecord, evaluate, train_loop
from qlrnn.utils.logging import MetricsLog

if TYPE_CHECKING:
    import argparse

logger = structlog.get_logger(__name__)

REPORT_NAME = "eval_report.json"


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_command_config(args, "train")
    spec = cfg.model
    examples = load_examples(cfg.data, spec.n_classes, cfg.split_seed)
    check_vocab(examples, spec.vocab_size, spec.n_classes if spec.task == "classify" else None)
    train, val = split_train_val(examples, cfg.data.train_ratio, cfg.split_seed)
    logger.info("data split", n_train=len(train), n_val=len(val))

    target = out_dir(cfg)
    metrics_log = MetricsLog(target)

    def record(epoch: EpochRecord) -> None:
        metrics_log.log_epoch(epoch.metrics_fields(), epoch.timing_fields())

    model = init_model(spec, cfg.train.seed, cfg.train.forget_bias)
    result = train_loop(model, train, val, cfg.train, on_epoch=record)

    meta = {
        "best_epoch": result.best_epoch,
        "best_metric": result.best_metric,
        "early_stop_metric": cfg.train.early_stop_metric,
        "epochs_run": len(result.records),
        "n_train": len(train),
        "n_val": len(val),
    }
    save_checkpoint(target / CHECKPOINT_NAME, result.best_model, meta)

    report = evaluate(result.best_model, val, cfg.train.max_len, cfg.train.batch_size)
    text = report.to_json()
    (target / REPORT_NAME).write_text(text + "\n", encoding="utf-8")
    print(text)
    logger.info("training finished", best_epoch=result.best_epoch, out_dir=str(target))
    return EXIT_OK


def register_train_command(subparsers: argparse._SubParsersAction[argparse.ArgumentParser]) -> None:
    """Add the `train` subparser."""
    parser = subparsers.add_parser("train", help="Train a model from a config file")
    add_run_options(parser)
    parser.set_defaults(handler=cmd_train)

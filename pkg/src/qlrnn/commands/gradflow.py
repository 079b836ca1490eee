# ABOUTME: `qlrnn gradflow` - gradient-norm decay table over temporal distance, as CSV
# ABOUTME: Can pin the forget path to a constant to compare against the analytic decay

"""Gradflow subcommand."""

from __future__ import annotations

from typing import TYPE_CHECKING

import structlog

from qlrnn.commands._common import add_run_options, load_command_config, write_artifact
from qlrnn.errors import EXIT_OK
from qlrnn.gradflow import gradient_flow_profile
from qlrnn.network import clamped_forget_model, init_model, with_input_path
from qlrnn.numerics import Rng

if TYPE_CHECKING:
    import argparse

    from qlrnn.network import Model

logger = structlog.get_logger(__name__)

GRADFLOW_TOKENS_STREAM = 21


def cmd_gradflow(args: argparse.Namespace) -> int:
    cfg = load_command_config(args, "gradflow")
    spec = cfg.model
    loss_model: Model | None = None
    if cfg.run.clamp_forget is not None:
        model = clamped_forget_model(spec, cfg.run.clamp_forget)
        loss_model = with_input_path(model, cfg.train.seed)
    else:
        model = init_model(spec, cfg.train.seed, cfg.train.forget_bias)

    high = min(spec.vocab_size, 256)
    tokens = Rng(cfg.train.seed, GRADFLOW_TOKENS_STREAM).integers(0, high, cfg.run.gradflow_len)
    label = 0 if spec.task == "classify" else None
    profile = gradient_flow_profile(
        model,
        tokens,
        label,
        clamp_forget=cfg.run.clamp_forget,
        with_fd=cfg.run.gradflow_fd,
        loss_model=loss_model,
    )
    text = profile.to_csv(with_loss=cfg.run.gradflow_loss)
    print(text, end="")
    write_artifact(cfg, "gradflow.csv", text)
    logger.info("gradient flow written", arch=spec.arch, length=cfg.run.gradflow_len)
    return EXIT_OK


def register_gradflow_command(
    subparsers: argparse._SubParsersAction[argparse.ArgumentParser],
) -> None:
    """Add the `gradflow` subparser."""
    parser = subparsers.add_parser(
        "gradflow",
        help="Gradient-flow decay table (CSV: distance,norm[,analytic][,fd_norm][,loss_grad])",
    )
    add_run_options(parser)
    parser.set_defaults(handler=cmd_gradflow)

# ABOUTME: qlrnn command-line entry point: argument parsing and subcommand dispatch
# ABOUTME: Maps escaped qlrnn errors to exit codes (2 config, 3 data, 4 numeric)

"""qlrnn CLI."""

from __future__ import annotations

import argparse
import sys

import structlog
from pydantic import ValidationError

from qlrnn import __version__
from qlrnn.commands.bench import register_bench_command
from qlrnn.commands.evaluate import register_eval_command
from qlrnn.commands.gradflow import register_gradflow_command
from qlrnn.commands.params import register_params_command
from qlrnn.commands.train import register_train_command
from qlrnn.config import load_settings
from qlrnn.errors import EXIT_CONFIG, QlrnnError
from qlrnn.utils.logging import configure_logging

logger = structlog.get_logger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qlrnn",
        description="Train, evaluate and profile QL-LSTM and baseline recurrent models",
    )
    parser.add_argument("--version", action="version", version=f"qlrnn {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    register_train_command(subparsers)
    register_eval_command(subparsers)
    register_params_command(subparsers)
    register_gradflow_command(subparsers)
    register_bench_command(subparsers)
    return parser


def main(argv: list[str] | None = None) -> int:
    """Run one subcommand and return its exit code."""
    try:
        settings = load_settings()
    except ValidationError as e:
        print(f"qlrnn: invalid QLRNN_* environment settings: {e}", file=sys.stderr)
        return EXIT_CONFIG
    configure_logging(settings.log_level, settings.log_format)

    args = build_parser().parse_args(argv)
    try:
        code: int = args.handler(args)
    except QlrnnError as e:
        logger.error(
            "command failed",
            command=args.command,
            error=e.message,
            details=e.details,
            exit_code=e.exit_code,
        )
        return e.exit_code
    except KeyboardInterrupt:
        logger.info("command interrupted", command=args.command)
        return 130
    return code


if __name__ == "__main__":
    sys.exit(main())

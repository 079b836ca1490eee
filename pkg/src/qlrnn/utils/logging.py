# ABOUTME: Structured logging with run ids for qlrnn commands
# ABOUTME: Also writes the per-epoch metrics log and its wall-clock companion

"""Structured logging with run ids and metric logs."""

from __future__ import annotations

import hashlib
import logging
import sys
from contextvars import ContextVar
from typing import TYPE_CHECKING, Any

import structlog

if TYPE_CHECKING:
    from collections.abc import Mapping, MutableMapping
    from pathlib import Path

run_id: ContextVar[str] = ContextVar("run_id", default="")


def derive_run_id(command: str, seed: int) -> str:
    """Stable 8-hex-char id for one (command, seed) invocation."""
    return hashlib.sha256(f"{command}:{seed}".encode()).hexdigest()[:8]


def get_run_id() -> str:
    return run_id.get()


def set_run_id(rid: str) -> None:
    run_id.set(rid)


def add_run_id(
    logger: structlog.types.WrappedLogger,  # noqa: ARG001
    method_name: str,  # noqa: ARG001
    event_dict: MutableMapping[str, Any],
) -> MutableMapping[str, Any]:
    """Structlog processor that adds run_id to every event once one is set."""
    rid = get_run_id()
    if rid:
        event_dict["run_id"] = rid
    return event_dict


def configure_logging(level: str = "INFO", fmt: str = "console") -> None:
    """
    Configure structured logging to stderr. Call once at startup.

    Args:
        level: Log level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        fmt: ``console`` (colored dev output), ``json`` or ``kv`` (key=value lines)
    """
    processors: list[structlog.types.Processor] = [
        structlog.contextvars.merge_contextvars,
        structlog.processors.add_log_level,
        structlog.processors.TimeStamper(fmt="iso"),
        add_run_id,
    ]

    if fmt == "json":
        processors.append(structlog.processors.JSONRenderer())
    elif fmt == "kv":
        processors.append(structlog.processors.KeyValueRenderer(key_order=["event"]))
    else:
        processors.append(structlog.dev.ConsoleRenderer())

    structlog.configure(
        processors=processors,
        wrapper_class=structlog.make_filtering_bound_logger(
            getattr(logging, level.upper(), logging.INFO)
        ),
        context_class=dict,
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )


def format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_kv(fields: Mapping[str, Any]) -> str:
    """Render fields as one ``key=value`` line in insertion order."""
    return " ".join(f"{key}={format_value(value)}" for key, value in fields.items())


class MetricsLog:
    """Per-epoch metric lines: metrics.log (deterministic) and timings.log (wall clock)."""

    METRICS_FILE = "metrics.log"
    TIMINGS_FILE = "timings.log"

    def __init__(self, out_dir: Path | None, echo: bool = True) -> None:
        """
        Initialize the metrics log, truncating files left by a previous run.

        Args:
            out_dir: Directory for the log files, or None to only echo.
            echo: Also print every metrics line to stdout.
        """
        self._out_dir = out_dir
        self._echo = echo
        self._logger = structlog.get_logger("metrics")
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            for name in (self.METRICS_FILE, self.TIMINGS_FILE):
                (out_dir / name).write_text("", encoding="utf-8")

    @property
    def metrics_path(self) -> Path | None:
        return None if self._out_dir is None else self._out_dir / self.METRICS_FILE

    def _append(self, name: str, line: str) -> None:
        if self._out_dir is not None:
            with (self._out_dir / name).open("a", encoding="utf-8") as f:
                f.write(line + "\n")

    def log_epoch(self, metrics: Mapping[str, Any], timings: Mapping[str, Any]) -> None:
        """Append one epoch: metrics to metrics.log (and stdout), timings to timings.log."""
        line = format_kv(metrics)
        self._append(self.METRICS_FILE, line)
        self._append(self.TIMINGS_FILE, format_kv(timings))
        if self._echo:
            print(line, flush=True)
        self._logger.info("epoch finished", **{**metrics, **timings})

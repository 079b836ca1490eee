# ABOUTME: Exception hierarchy for the qlrnn engine
# ABOUTME: Each error carries the CLI exit code it maps to

"""Structured errors raised across qlrnn.

Every error renders as ``message - details`` and carries an ``exit_code``
the CLI returns when the error escapes a subcommand.
"""

from __future__ import annotations

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class QlrnnError(Exception):
    """Base error for all qlrnn failures."""

    exit_code: int = 1

    def __init__(self, message: str, details: str | None = None) -> None:
        self.message = message
        self.details = details
        super().__init__(str(self))

    def __str__(self) -> str:
        base = self.message
        if self.details:
            base += f" - {self.details}"
        return base


class ShapeError(QlrnnError, ValueError):
    """Operand shapes do not conform."""

    exit_code = EXIT_NUMERIC


class NumericError(QlrnnError, ArithmeticError):
    """A computation produced or received a non-finite value."""

    exit_code = EXIT_NUMERIC


class NumericAbortError(NumericError):
    """Training diverged; the run was aborted."""


class ConfigError(QlrnnError, ValueError):
    """Run configuration is malformed or inconsistent."""

    exit_code = EXIT_CONFIG


class SpecError(ConfigError):
    """Model specification is invalid (unknown arch, bad combination)."""


class DataError(QlrnnError, ValueError):
    """Dataset, token stream or checkpoint document is unusable."""

    exit_code = EXIT_DATA


class EmptyBlockError(QlrnnError, ValueError):
    """Pooling was asked to summarize a block with no hidden states."""


class UndefinedMetricError(QlrnnError, ValueError):
    """Metric is undefined for the given input (e.g. single-class ROC-AUC)."""


class ParameterCountMismatch(QlrnnError, AssertionError):
    """Enumerated tensor sizes disagree with the closed-form count."""

    exit_code = EXIT_NUMERIC

"""Exception types for vipcast.

Every error carries the process exit code the CLI reports for it:
2 for bad input or configuration, 3 for numeric failure.
"""

from __future__ import annotations

from typing import Optional


class VipError(Exception):
    """Base class for all vipcast errors."""

    exit_code: int = 2


class ConfigError(VipError, ValueError):
    """Invalid configuration or inconsistent settings."""


class ParseError(ConfigError):
    """Malformed input file. Carries the file path and 1-based line number."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{where}{message}")


class UnsupportedMethodError(ConfigError):
    """A selection method cannot run with the inputs provided."""


class DegenerateDataError(VipError, ValueError):
    """Data that cannot be normalized (e.g. a constant series)."""


class BudgetError(VipError, ValueError):
    """More pinned variables than the retention budget allows."""


class ContractError(VipError, ValueError):
    """A function was called outside its contract."""


class ShapeError(ContractError):
    """Incompatible tensor shapes."""


class UndefinedMetricError(VipError, ValueError):
    """A metric has no defined value for the given input."""


class NumericError(VipError, RuntimeError):
    """Non-finite values produced during a forward or backward pass."""

    exit_code = 3

    def __init__(self, message: str, stage: Optional[str] = None):
        self.stage = stage
        super().__init__(f"[{stage}] {message}" if stage else message)

"""Custom exceptions for the graphebm package."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Union


class GraphEBMError(Exception):
    """Base exception for all graphebm errors."""


class ConfigurationError(GraphEBMError):
    """Raised when a configuration value, topology or threshold is invalid."""


class ContractError(GraphEBMError, ValueError):
    """Raised when an operation's shape or precondition contract is violated."""


class DomainError(GraphEBMError, ValueError):
    """Raised when a value lies outside an operation's mathematical domain."""


class DivergenceError(GraphEBMError):
    """Raised when a rollout, loss or gradient becomes non-finite.

    ``step`` is the Euler step and ``epoch`` the training epoch at which
    the non-finite value appeared, whichever applies.
    """

    def __init__(self, message: str, step: Optional[int] = None,
                 epoch: Optional[int] = None):
        super().__init__(message)
        self.step = step
        self.epoch = epoch


class DataFileError(GraphEBMError):
    """Raised when an artifact on disk is missing or cannot be parsed."""

    def __init__(self, message: str, path: Union[str, Path, None] = None,
                 line: Optional[int] = None):
        if path is not None and line is not None:
            message = f"{path}:{line}: {message}"
        elif path is not None:
            message = f"{path}: {message}"
        super().__init__(message)
        self.path = Path(path) if path is not None else None
        self.line = line


class UndefinedMetricError(GraphEBMError):
    """Raised when a metric has no valid entries to average over."""

"""
Exception hierarchy for proxdiff.

Every error raised by the numerical core derives from ProxDiffError so the
services and the CLI can catch one type at cell granularity.
"""

from typing import Any, Optional


class ProxDiffError(Exception):
    """Base class for all proxdiff errors."""


class DomainError(ProxDiffError, ValueError):
    """An argument lies outside the domain of the operation."""


class SingularTimeError(DomainError, ZeroDivisionError):
    """lambda(t) is zero where a ratio or a Moreau score needs it positive."""


class ShapeError(ProxDiffError, ValueError):
    """Array dimensions do not agree."""


class DivergenceError(ProxDiffError, FloatingPointError):
    """A sampler state became non-finite."""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step


class TrainingError(ProxDiffError):
    """Training loss became non-finite; carries the last stable parameters."""

    def __init__(self, message: str, epoch: int, checkpoint: Any = None):
        super().__init__(message)
        self.epoch = epoch
        self.checkpoint = checkpoint


class OracleError(ProxDiffError):
    """A reference computation (quadrature, grid search, optimizer) failed."""


class ConfigError(ProxDiffError):
    """A configuration file could not be parsed or validated."""

    def __init__(self, message: str, path: Optional[str] = None,
                 lineno: Optional[int] = None, colno: Optional[int] = None):
        location = ''
        if path is not None:
            location = f"{path}"
            if lineno is not None:
                location += f":{lineno}"
                if colno is not None:
                    location += f":{colno}"
            location += ': '
        super().__init__(f"{location}{message}")
        self.path = path
        self.lineno = lineno
        self.colno = colno

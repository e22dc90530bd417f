"""Exception types shared across the package.

Every error raised on purpose derives from :class:`DdhmmError` so callers
(and the command line front end) can map failures to exit codes without
string matching.
"""

from __future__ import annotations


class DdhmmError(Exception):
    """Base class for all package errors."""


class DomainError(DdhmmError):
    """A scalar argument is outside its mathematical domain."""


class DimensionError(DdhmmError):
    """An array argument has the wrong shape; the message names the field."""

    def __init__(self, field: str, expected, actual) -> None:
        self.field = field
        self.expected = expected
        self.actual = actual
        super().__init__(f"{field}: expected shape {expected}, got {actual}")


class ModelStructureError(DdhmmError):
    """The model configuration itself is invalid (e.g. a single state)."""


class NumericalError(DdhmmError):
    """A computation failed to converge or produced non-finite values."""


class ImpossiblePrefixError(NumericalError):
    """A filtered prefix has zero probability under the model."""


class EstimationError(DdhmmError):
    """All optimisation restarts failed."""


class DataError(DdhmmError):
    """Malformed input data; carries a line number when one is known."""

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(DdhmmError):
    """An invalid configuration value supplied by the caller."""

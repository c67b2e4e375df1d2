"""Shared exception types.

Every module raises one of these four, so callers (and the CLI) can map
failures to a single-line diagnosis without inspecting tracebacks.
"""


class SeqclsError(Exception):
    """Base class for all library errors."""


class DimensionError(SeqclsError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ParameterError(SeqclsError, ValueError):
    """A configuration value or argument is outside its legal range."""


class DataError(SeqclsError, ValueError):
    """Input data is missing, malformed, or inconsistent."""


class NumericError(SeqclsError, ArithmeticError):
    """A computation produced non-finite values."""

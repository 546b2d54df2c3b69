"""Shared exception and warning types."""


class NnpiError(Exception):
    """Base class for library errors."""


class SchemaError(NnpiError, ValueError):
    """Input file header does not declare the required columns."""


class ParseError(NnpiError, ValueError):
    """A cell could not be parsed; the message carries the data row index."""


class EmptyInputError(NnpiError, ValueError):
    """A file or batch that must be non-empty is empty."""


class ConfigError(NnpiError, ValueError):
    """Invalid configuration value or combination."""


class NumericalError(NnpiError, RuntimeError):
    """Training produced non-finite values (typically learning rate too high)."""


class DataWarning(UserWarning):
    """Recoverable data irregularity (constant column, missing level, ...)."""

"""Exception hierarchy shared by every module.

The CLI maps :class:`DataError` and :class:`ConfigError` (and subclasses) to
exit code 1 and :class:`InvariantError` to exit code 2.
"""


class HiTransformerError(Exception):
    """Base class for all package errors."""


class DataError(HiTransformerError):
    """Malformed or inconsistent input data."""


class ParseError(DataError):
    pass


class SchemaError(DataError):
    pass


class ConfigError(HiTransformerError, ValueError):
    """Invalid configuration value or inconsistent hyperparameters."""


class DimensionError(HiTransformerError, ValueError):
    """Tensor shapes do not agree."""


class DomainError(HiTransformerError, ValueError):
    """Input outside an operation's domain (e.g. a fully masked softmax row)."""


class NumericError(HiTransformerError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class InvariantError(HiTransformerError):
    """Internal contract violated (missing gradient, failed gradcheck, ...)."""


class BenchmarkError(HiTransformerError):
    pass

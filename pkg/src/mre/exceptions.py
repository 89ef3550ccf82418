"""Exception hierarchy shared by every module.

The CLI maps :class:`ValidationError` subclasses to exit code 2 and
:class:`NumericalError` subclasses to exit code 3.
"""


class MREError(Exception):
    """Base class for all package errors."""


class ValidationError(MREError, ValueError):
    """Bad input, bad configuration or a violated call contract."""


class ShapeError(ValidationError):
    """Operand shapes do not conform for the requested operation."""


class ContractError(ValidationError):
    """A precondition of an operation was violated."""


class ParseError(ValidationError):
    """A dataset, config or checkpoint file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(ValidationError):
    """Configuration values are missing, unknown or inconsistent."""


class NumericalError(MREError, ArithmeticError):
    """A computation produced or would produce a non-finite value."""


class DomainError(NumericalError):
    """An argument lies outside the mathematical domain of an operation."""


class DivergenceError(NumericalError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch

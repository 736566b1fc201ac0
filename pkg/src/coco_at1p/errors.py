"""Exception hierarchy shared by all modules."""


class CocoError(Exception):
    """Base class for every error raised by the package."""


class InputError(CocoError, ValueError):
    """Bad user input: files, config values, contract terms."""


class ParseError(InputError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(InputError):
    pass


class ValidationError(InputError):
    pass


class InvalidIntervalError(CocoError, ValueError):
    """A time interval with its end before its start."""


class DomainError(CocoError, ValueError):
    """Model evaluated outside its domain (e.g. firm value at or below the barrier)."""


class DegenerateError(CocoError, ValueError):
    """Singular design, zero dispersion, empty annuity and similar degenerate inputs."""


class InsufficientDataError(DegenerateError):
    pass


class CalibrationError(CocoError):
    pass


class NumericalError(CocoError, ArithmeticError):
    pass

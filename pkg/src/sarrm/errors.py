"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class SarrmError(Exception):
    exit_code = 1


class ConfigError(SarrmError, ValueError):
    """Invalid configuration or mismatched shapes."""

    exit_code = 2

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class StateError(SarrmError, RuntimeError):
    """Operation invoked in a state that cannot support it (empty buffer, missing history, ...)."""

    exit_code = 3


class NumericError(SarrmError, ArithmeticError):
    """A non-finite value appeared in a computation."""

    exit_code = 4


class DomainError(SarrmError, ValueError):
    """Argument outside the mathematical domain of an operation."""

    exit_code = 5

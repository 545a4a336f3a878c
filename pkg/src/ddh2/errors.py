"""Exception types raised by the library."""


class H2Error(Exception):
    """Base class for library errors."""


class InvalidInputError(H2Error, ValueError):
    """Malformed points, parameters or mismatched inputs."""


class ConfigurationError(H2Error, ValueError):
    """Unknown kernel name, reduction method or option."""


class KernelDomainError(H2Error, ArithmeticError):
    """A kernel evaluation produced a non-finite value."""

    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


class NumericalFailureError(H2Error, ArithmeticError):
    """An iterative dense factorization failed to converge."""


class AccuracyUnreachableError(H2Error, RuntimeError):
    """Rank calibration could not reach the requested tolerance."""

    def __init__(self, message, best_error=None):
        super().__init__(message)
        self.best_error = best_error


class PreconditionError(H2Error, RuntimeError):
    """An operation was called on an object missing required state."""

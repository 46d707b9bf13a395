"""Exception hierarchy shared by every module of the package."""


class DetectionError(Exception):
    """Base class for all package errors."""


class InvalidInputError(DetectionError, ValueError):
    """An argument violates a documented precondition on its value."""


class InvalidCorrelationError(InvalidInputError):
    """A correlation coefficient is outside the open interval (-1, 1)."""


class PreconditionError(DetectionError, ValueError):
    """A structural precondition (acyclicity, eigenvalue spread, ...) fails."""


class SingularityError(DetectionError, ArithmeticError):
    """A covariance or conditional variance is numerically degenerate."""


class InvalidStateError(DetectionError, RuntimeError):
    """An operation was requested in a state where it is undefined."""


class ConfigError(DetectionError, ValueError):
    """One or more configuration problems.

    ``errors`` holds every problem found, not only the first one.
    """

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))

"""Exception hierarchy shared across the package."""


class KslabError(Exception):
    """Base class for all package errors."""


class InvalidCoefficientError(KslabError):
    """A coefficient function evaluated outside its admissible range."""


class ValidationError(KslabError):
    """A spec, config, or precondition failed validation."""


class GridMismatchError(KslabError):
    """A field was used with a grid it does not belong to."""


class SolverStallError(KslabError):
    """The iterative linear solver hit its iteration cap."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class PositivityError(KslabError):
    """A time step produced negative density beyond rounding tolerance."""


class WindowTooShortError(KslabError):
    """A time series is shorter than the requested integration window."""

"""Exception types raised across the package."""


class KraichnanLabError(Exception):
    """Base class for all package errors."""


class ValidationError(KraichnanLabError, ValueError):
    """A parameter or input is outside its admissible domain."""


class NumericalError(KraichnanLabError, ArithmeticError):
    """A numerical procedure (quadrature, linear solve, SDE step) failed."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class FitError(KraichnanLabError, ValueError):
    """A regression could not be performed on the supplied data."""


class ConfigError(KraichnanLabError, ValueError):
    """An experiment configuration is malformed."""

    def __init__(self, message, key=None, lines=None):
        super().__init__(message)
        self.key = key
        self.lines = tuple(lines) if lines else ()

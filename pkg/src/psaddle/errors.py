"""Exception types shared across the package."""


class PsaddleError(Exception):
    """Base class for all package errors."""


class NotSpdError(PsaddleError):
    """Matrix handed to an SPD factorization is not symmetric positive definite."""


class DimensionMismatchError(PsaddleError):
    """Operand shapes are inconsistent with the operator."""


class NotConvergedError(PsaddleError):
    """An iterative solve hit its iteration cap before reaching tolerance.

    The best iterate found so far is attached so callers can inspect it.
    """

    def __init__(self, message, best=None, iterations=None):
        super().__init__(message)
        self.best = best
        self.iterations = iterations


class InvalidSpaceError(PsaddleError):
    """A space pairing violates a precondition (e.g. trial not inside test)."""


class ConfigError(PsaddleError):
    """Experiment configuration is missing, malformed, or inconsistent."""

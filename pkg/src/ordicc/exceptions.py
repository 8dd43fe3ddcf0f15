"""Exception hierarchy shared across the package."""


class OrdinalICCError(Exception):
    """Base class for all package errors."""


class InvalidInputError(OrdinalICCError, ValueError):
    """Raised for malformed arguments (non-finite values, bad shapes, ...)."""


class DegenerateOutcomeError(OrdinalICCError, ValueError):
    """Raised when an outcome has fewer than two observed categories."""


class LikelihoodEvaluationError(OrdinalICCError, ArithmeticError):
    """Raised when the marginal log-likelihood is not finite.

    Parameters
    ----------
    message : str
    cluster : object, optional
        Identifier of the first cluster whose contribution was non-finite.
    """

    def __init__(self, message, cluster=None):
        super().__init__(message)
        self.cluster = cluster


class ConvergenceError(OrdinalICCError, RuntimeError):
    """Raised when an inner optimisation (e.g. a profile point) fails."""


class CIUnavailableError(OrdinalICCError):
    """Raised when a confidence interval cannot be constructed."""


class UndefinedICCError(OrdinalICCError, ZeroDivisionError):
    """Raised when every variance component is zero."""

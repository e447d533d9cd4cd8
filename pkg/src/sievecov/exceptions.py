"""Exception types raised across the package."""

import numpy as np


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class ValidationError(ValueError):
    """Input data failed a structural check (shapes, ranks, degeneracy)."""


class EvaluationError(ArithmeticError):
    """A numerical evaluation produced non-finite values."""


class DegenerateTargetError(DomainError):
    """The target covariance has (numerically) zero norm."""


class ConditioningError(np.linalg.LinAlgError):
    """A matrix could not be factorized within the jitter budget.

    Attributes
    ----------
    min_pivot : float or None
        Smallest diagonal pivot seen in the last failed attempt, when known.
    """

    def __init__(self, message, min_pivot=None):
        super().__init__(message)
        self.min_pivot = min_pivot


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap.

    The best iterate found so far is attached as ``best``.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best

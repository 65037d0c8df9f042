"""Exception hierarchy shared across the package."""


class DLNMError(Exception):
    """Base class for all package errors."""


class SpecError(DLNMError, ValueError):
    """Invalid or inconsistent model / basis specification."""


class DomainError(DLNMError, ValueError):
    """A value falls outside the support of a basis or mapping."""


class ShapeError(DLNMError, ValueError):
    """Inputs have incompatible or ragged shapes."""


class ConsistencyError(DLNMError, ValueError):
    """Panel, adjacency and configuration disagree with each other."""


class DataError(DLNMError, ValueError):
    """Malformed input data (CSV parse failures, bad counts, ...)."""


class NumericalError(DLNMError, ArithmeticError):
    """A factorization or iteration failed."""


class InnerConvergenceError(NumericalError):
    """Newton iterations for the conditional mode did not converge.

    The last iterate is kept on ``xi`` so callers can inspect or restart.
    """

    def __init__(self, message, xi=None, n_iter=None):
        super().__init__(message)
        self.xi = xi
        self.n_iter = n_iter


class ScoringError(DLNMError, ValueError):
    """Replicate grids are incomplete or misaligned with the truth."""

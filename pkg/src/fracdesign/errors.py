"""Exception and warning types raised by fracdesign."""


class FracDesignError(Exception):
    """Base class for all package errors."""


class DomainError(FracDesignError, ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class GridError(DomainError):
    """A time grid violates a structural requirement."""


class GridResolutionError(GridError):
    """The grid is too coarse for a stable numerical operation.

    ``recommended`` carries a suggested number of points (or ratio) when known.
    """

    def __init__(self, message, recommended=None):
        super().__init__(message)
        self.recommended = recommended


class NumericalError(FracDesignError, ArithmeticError):
    """A numerical procedure failed to converge or lost accuracy."""


class ConditioningError(NumericalError):
    """A matrix or information quantity is too badly conditioned to use."""


class ExperimentAborted(FracDesignError):
    """Too many Monte Carlo replications failed.

    ``summary`` (possibly ``None``) and ``rows`` keep what was computed.
    """

    def __init__(self, message, summary=None, rows=None):
        super().__init__(message)
        self.summary = summary
        self.rows = rows


class BoundaryWarning(UserWarning):
    """The likelihood maximizer sits on the edge of the search bracket."""


class RegimeWarning(UserWarning):
    """Parameters fall outside the asymptotic regime a procedure relies on."""

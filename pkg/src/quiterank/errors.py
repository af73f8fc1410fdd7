"""Exception hierarchy shared by every quiterank module."""


class QuiteError(Exception):
    """Base class for all quiterank errors."""


class DomainError(QuiteError, ValueError):
    """An argument lies outside the mathematical domain of a function."""


class BoundaryError(DomainError):
    """A density was queried on or outside the boundary of its support."""


class ParameterError(QuiteError, ValueError):
    """Inconsistent or infeasible parameters (sizes, divisibility, ranges)."""


class UnsupportedPriorError(ParameterError):
    """The requested computation is not defined for this prior family."""


class DataError(QuiteError, ValueError):
    """The answer data cannot support the requested estimate."""


class StateError(QuiteError, RuntimeError):
    """An object was used before it was given the data it needs."""


class ConstructionError(QuiteError, RuntimeError):
    """A randomized construction failed within its retry budget."""


class NumericError(QuiteError, ArithmeticError):
    """A numerical routine failed to converge or produced non-finite values."""


class RankError(NumericError):
    """A linear system is singular (typically: disconnected graph)."""

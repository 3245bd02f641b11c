"""Exception and warning types raised across the package."""


class KronMTLError(Exception):
    """Base class for all package errors."""


class ConfigError(KronMTLError, ValueError):
    """Invalid configuration or argument values."""


class DimMismatchError(KronMTLError, ValueError):
    """Array shapes that do not agree."""


class NumericalError(KronMTLError):
    """Base class for failures of the numerical routines."""


class NotPDError(NumericalError):
    """A matrix that must be positive definite failed its Cholesky factorization."""


class SingularError(NumericalError):
    """A matrix that must be inverted is singular."""


class NonFiniteError(NumericalError):
    """A computed quantity overflowed or became NaN."""


class DimensionCapError(NumericalError):
    """The dense path was requested above its size cap."""


class NoProgressError(NumericalError):
    """A line search shrank the step below machine resolution."""


class MalformedOneHotError(KronMTLError, ValueError):
    """A response matrix that should be 1-of-K is not."""


class ConvergenceWarning(UserWarning):
    """An iterative solver stopped at its iteration cap."""

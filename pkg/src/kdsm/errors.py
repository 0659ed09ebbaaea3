"""Exception types raised across the package."""


class KdsmError(Exception):
    """Base class for package errors."""


class InvalidSpecError(KdsmError, ValueError):
    """A configuration or parameter record violates its invariants."""


class DimensionMismatchError(KdsmError, ValueError):
    pass


class UnsupportedError(KdsmError, ValueError):
    """Requested combination of options is not supported."""


class SingularSystemError(KdsmError, ArithmeticError):
    """Linear system could not be factorized even after jitter escalation."""


class EstimationError(KdsmError, ArithmeticError):
    """A Monte-Carlo estimate could not be formed (e.g. all weights zero)."""


class StuckChainError(KdsmError, RuntimeError):
    """An MCMC chain rejected every proposal for too long."""

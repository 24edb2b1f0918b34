"""Exception hierarchy shared by every klap module."""


class KlapError(Exception):
    """Base class for all errors raised by klap."""


class ShapeError(KlapError, ValueError):
    """Operands live on alphabets of incompatible sizes."""


class DomainError(KlapError, ValueError):
    """A parameter lies outside its admissible range."""


class DegenerateInputError(KlapError, ValueError):
    """Input carries no usable mass (e.g. an all-zero vector)."""


class SupportError(KlapError, ValueError):
    """A zero entry makes a log-likelihood cost infinite."""


class ConfigurationError(KlapError, ValueError):
    """Inconsistent solver or scenario configuration."""


class InitializationError(KlapError, ValueError):
    """The objective is not finite at the starting point."""


class InfeasibleError(KlapError, ValueError):
    """No distribution on the simplex reproduces the observed marginal."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ScaleGuardError(KlapError, ValueError):
    """A brute-force routine was asked to enumerate too large a space."""


class DataError(KlapError, ValueError):
    """Sample data references symbols outside the alphabet."""

"""Exception types shared across the package."""


class FedBanditError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(FedBanditError, ArithmeticError):
    """A factorization met a non-positive pivot."""


class SymmetryError(FedBanditError, ValueError):
    """A matrix that must be symmetric is not, beyond tolerance."""


class NoConvergence(FedBanditError, RuntimeError):
    """An iterative solver exhausted its iteration budget."""


class DimensionTooLarge(FedBanditError, ValueError):
    pass


class InvalidCorruptionBound(FedBanditError, ValueError):
    pass


class InvalidAlpha(FedBanditError, ValueError):
    pass


class ConfigError(FedBanditError, ValueError):
    """Raised for malformed or inconsistent experiment configurations."""

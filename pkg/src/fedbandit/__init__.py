"""Byzantine-robust federated linear bandits."""

from .errors import (ConfigError, DimensionTooLarge, FedBanditError, InvalidAlpha,
                     InvalidCorruptionBound, NoConvergence, NotPositiveDefinite, SymmetryError)
from .kernels import backend

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DimensionTooLarge", "FedBanditError", "InvalidAlpha",
    "InvalidCorruptionBound", "NoConvergence", "NotPositiveDefinite", "SymmetryError",
    "backend", "__version__",
]

"""Position-bias measurement toolkit for swap-randomized search logs."""

__version__ = "0.1.0"

from rankprop.errors import (
    BrokenChainError,
    CoverageError,
    InsufficientDataError,
    InvariantError,
    RankpropError,
    RejectRateError,
    SchemaError,
    UndefinedRatioError,
)

__all__ = [
    "__version__",
    "RankpropError",
    "SchemaError",
    "InvariantError",
    "RejectRateError",
    "InsufficientDataError",
    "UndefinedRatioError",
    "BrokenChainError",
    "CoverageError",
]

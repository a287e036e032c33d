"""Exception hierarchy shared across the toolkit.

Every domain failure raises a subclass of RankpropError so the CLI can map
it to a single machine-parseable line. Precondition violations on plain
arguments (bad replication counts, non-positive rates) raise ValueError.
"""

from __future__ import annotations


class RankpropError(Exception):
    """Base class for all domain errors."""


class SchemaError(RankpropError):
    """A log record is missing fields or has fields of the wrong shape."""


class InvariantError(RankpropError):
    """A structurally valid record violates a session invariant."""


class RejectRateError(RankpropError):
    """Too many rejected lines while merging log files."""


class InsufficientDataError(RankpropError):
    """A required estimation cell or population has no observations."""


class UndefinedRatioError(RankpropError):
    """The lower-position rate sum is zero, so the ratio is undefined."""


class BrokenChainError(RankpropError):
    """Pair estimates do not form a connected chain from position 1."""


class CoverageError(RankpropError):
    """A propensity table or score table does not cover a required key."""

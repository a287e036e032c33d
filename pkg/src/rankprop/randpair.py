"""Swap-pair randomization: arm definitions, visitor bucketing, swap application.

Bucketing must be a pure, stable function of (salt, visitor_id) so a
returning visitor always lands in the same arm. The hash is FNV-1a 64-bit
over ``salt + 0x1F + visitor_id`` (UTF-8), passed through the murmur3
64-bit finalizer for avalanche, then scaled to [0, 1). The exact recipe is
documented in the README; changing it invalidates any live allocation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF
_SEP = 0x1F

DEFAULT_SWAP_PAIRS: tuple[tuple[int, int], ...] = tuple(
    [(k, k + 1) for k in range(1, 11)] + [(11, 19)]
)


@dataclass(frozen=True)
class ArmAssignment:
    """One visitor's arm: the untouched holdout or a single swap pair."""

    kind: str  # "holdout" | "swap"
    hi: int | None = None
    lo: int | None = None
    applied: bool = False

    def __post_init__(self) -> None:
        if self.kind not in ("holdout", "swap"):
            raise ValueError(f"unknown arm kind {self.kind!r}")
        if self.kind == "holdout":
            if self.hi is not None or self.lo is not None:
                raise ValueError("holdout arm carries no swap positions")
            if self.applied:
                raise ValueError("holdout arm cannot be applied")
        else:
            if self.hi is None or self.lo is None:
                raise ValueError("swap arm requires hi and lo positions")
            if not (1 <= self.hi < self.lo):
                raise ValueError(f"swap arm needs 1 <= hi < lo, got ({self.hi}, {self.lo})")

    @property
    def is_swap(self) -> bool:
        return self.kind == "swap"


HOLDOUT_ARM = ArmAssignment(kind="holdout")


@dataclass(frozen=True)
class AllocationPlan:
    """Traffic split between a holdout and a set of swap arms.

    The remainder after the holdout fraction is divided uniformly across
    the swap pairs. ``salt`` decorrelates bucketing between plans.
    """

    holdout_fraction: float
    swap_pairs: tuple[tuple[int, int], ...]
    salt: str

    def __post_init__(self) -> None:
        if not 0.0 <= self.holdout_fraction <= 1.0:
            raise ValueError("holdout_fraction must be in [0, 1]")
        seen = set()
        for hi, lo in self.swap_pairs:
            if not (1 <= hi < lo):
                raise ValueError(f"swap pair needs 1 <= hi < lo, got ({hi}, {lo})")
            if (hi, lo) in seen:
                raise ValueError(f"duplicate swap pair ({hi}, {lo})")
            seen.add((hi, lo))
        if self.holdout_fraction < 1.0 and not self.swap_pairs:
            raise ValueError("plan allocates traffic to swaps but has no swap pairs")

    @classmethod
    def default(cls, salt: str = "randpair-v1") -> "AllocationPlan":
        return cls(holdout_fraction=0.5, swap_pairs=DEFAULT_SWAP_PAIRS, salt=salt)

    def to_dict(self) -> dict:
        return {
            "holdout_fraction": self.holdout_fraction,
            "swap_pairs": [list(p) for p in self.swap_pairs],
            "salt": self.salt,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AllocationPlan":
        return cls(
            holdout_fraction=float(d["holdout_fraction"]),
            swap_pairs=tuple((int(hi), int(lo)) for hi, lo in d["swap_pairs"]),
            salt=str(d["salt"]),
        )

    def plan_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def fmix64(h: int) -> int:
    h ^= h >> 33
    h = (h * 0xFF51AFD7ED558CCD) & _MASK64
    h ^= h >> 33
    h = (h * 0xC4CEB9FE1A85EC53) & _MASK64
    h ^= h >> 33
    return h


def bucket_value(visitor_id: str, salt: str) -> float:
    """Stable hash of (salt, visitor) scaled to [0, 1)."""
    data = salt.encode("utf-8") + bytes([_SEP]) + visitor_id.encode("utf-8")
    return fmix64(fnv1a64(data)) / 2.0**64


def assign_arm(visitor_id: str, plan: AllocationPlan) -> ArmAssignment:
    """Deterministically bucket a visitor into the holdout or one swap arm.

    ``applied`` is left False; it is only settled once a concrete ranking
    is long enough for apply_swap to act.
    """
    u = bucket_value(visitor_id, plan.salt)
    if u < plan.holdout_fraction or plan.holdout_fraction >= 1.0:
        return HOLDOUT_ARM
    span = 1.0 - plan.holdout_fraction
    idx = int((u - plan.holdout_fraction) / span * len(plan.swap_pairs))
    idx = min(idx, len(plan.swap_pairs) - 1)
    hi, lo = plan.swap_pairs[idx]
    return ArmAssignment(kind="swap", hi=hi, lo=lo, applied=False)


def bucket_values_batch(visitor_ids: Sequence[str], salt: str) -> np.ndarray:
    """Vectorized bucket_value over many visitors; bit-equal to the scalar path.

    FNV-1a folds bytes sequentially, so ids are grouped by byte length and
    each group is hashed column by column with wrapping uint64 arithmetic.
    """
    out = np.empty(len(visitor_ids), dtype=np.float64)
    prefix = salt.encode("utf-8") + bytes([_SEP])
    h_prefix = fnv1a64(prefix)
    by_len: dict[int, list[int]] = {}
    encoded = [v.encode("utf-8") for v in visitor_ids]
    for i, raw in enumerate(encoded):
        by_len.setdefault(len(raw), []).append(i)
    prime = np.uint64(_FNV_PRIME)
    for width, idxs in by_len.items():
        idx_arr = np.asarray(idxs, dtype=np.int64)
        if width == 0:
            out[idx_arr] = fmix64(h_prefix) / 2.0**64
            continue
        mat = np.frombuffer(b"".join(encoded[i] for i in idxs), dtype=np.uint8)
        mat = mat.reshape(len(idxs), width)
        h = np.full(len(idxs), h_prefix, dtype=np.uint64)
        with np.errstate(over="ignore"):
            for col in range(width):
                h = (h ^ mat[:, col].astype(np.uint64)) * prime
            h ^= h >> np.uint64(33)
            h *= np.uint64(0xFF51AFD7ED558CCD)
            h ^= h >> np.uint64(33)
            h *= np.uint64(0xC4CEB9FE1A85EC53)
            h ^= h >> np.uint64(33)
        out[idx_arr] = h.astype(np.float64) / 2.0**64
    return out


def assign_arms_batch(visitor_ids: Sequence[str], plan: AllocationPlan) -> np.ndarray:
    """Arm index per visitor: -1 for holdout, otherwise an index into swap_pairs."""
    u = bucket_values_batch(visitor_ids, plan.salt)
    arm = np.full(len(visitor_ids), -1, dtype=np.int64)
    if plan.holdout_fraction >= 1.0:
        return arm
    treated = u >= plan.holdout_fraction
    span = 1.0 - plan.holdout_fraction
    idx = ((u[treated] - plan.holdout_fraction) / span * len(plan.swap_pairs)).astype(np.int64)
    np.clip(idx, 0, len(plan.swap_pairs) - 1, out=idx)
    arm[treated] = idx
    return arm


def apply_swap(natural_ranking: Sequence, arm: ArmAssignment) -> tuple[list, ArmAssignment]:
    """Exchange the arm's two positions when the list is long enough.

    Returns the displayed ranking and the arm with ``applied`` settled.
    Rankings shorter than the lower swap position are shown untouched.
    """
    if len(natural_ranking) == 0:
        raise ValueError("natural_ranking must be non-empty")
    displayed = list(natural_ranking)
    if arm.kind != "swap" or arm.lo is None or len(displayed) < arm.lo:
        if arm.kind == "holdout":
            return displayed, arm
        return displayed, ArmAssignment(kind="swap", hi=arm.hi, lo=arm.lo, applied=False)
    hi_i, lo_i = arm.hi - 1, arm.lo - 1
    displayed[hi_i], displayed[lo_i] = displayed[lo_i], displayed[hi_i]
    return displayed, ArmAssignment(kind="swap", hi=arm.hi, lo=arm.lo, applied=True)

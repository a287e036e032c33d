"""Relative propensity estimation from swap-randomized logs.

For a swapped pair (hi, lo) the quality-neutral contact rate at hi is the
unweighted average of the rate of docs naturally at hi and the rate of
docs swapped up from lo; symmetrically at lo. The ratio of the two rate
sums estimates theta_hi / theta_lo: the quality terms appear in both
numerator and denominator and cancel, because the swap draw is independent
of relevance. Ratios for adjacent pairs chain multiplicatively into a full
curve referenced to position 1.

Unswapped cells are sourced from the holdout population (filtered to the
same minimum list length) rather than from unapplied swap-arm sessions:
the holdout sees the identical natural ordering and is an order of
magnitude larger than any single arm.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from rankprop.core import PropensityTable, SearchSession
from rankprop.errors import (
    BrokenChainError,
    InsufficientDataError,
    UndefinedRatioError,
)
from rankprop.sim import SessionBatch

logger = logging.getLogger(__name__)

_CELL_NAMES = {
    "n_hh": "natural hi shown at hi (holdout)",
    "n_ll": "natural lo shown at lo (holdout)",
    "n_lh": "natural lo swapped up to hi",
    "n_hl": "natural hi swapped down to lo",
}


@dataclass(frozen=True)
class PairCounts:
    """Contact/impression counts for the four cells of one swapped pair.

    Cell naming uses (original position, displayed position): c_lh counts
    contacts on docs naturally at lo that were displayed at hi.
    """

    hi: int
    lo: int
    c_hh: int
    n_hh: int
    c_lh: int
    n_lh: int
    c_ll: int
    n_ll: int
    c_hl: int
    n_hl: int

    def __post_init__(self) -> None:
        for c_name, n_name in (("c_hh", "n_hh"), ("c_lh", "n_lh"), ("c_ll", "n_ll"), ("c_hl", "n_hl")):
            c, n = getattr(self, c_name), getattr(self, n_name)
            if c < 0 or n < 0 or c > n:
                raise ValueError(f"cell {c_name}={c}, {n_name}={n} is not a valid count pair")


@dataclass(frozen=True)
class RatioEstimate:
    """Point estimate of theta_hi / theta_lo, optionally with a bootstrap CI."""

    hi: int
    lo: int
    ratio: float
    ci: tuple[float, float] | None = None
    n_effective: int = 0

    def __post_init__(self) -> None:
        if self.ratio <= 0:
            raise ValueError("ratio must be positive")
        if self.ci is not None and not (self.ci[0] <= self.ratio <= self.ci[1]):
            raise ValueError(f"ci {self.ci} does not bracket ratio {self.ratio}")


@dataclass
class PairBasis:
    """Per-pair sufficient statistics for estimation and session bootstrap.

    treated[2x + y] counts applied swap sessions by (x, y) where x is the
    contact flag of the swapped-up doc (displayed hi) and y of the
    swapped-down doc (displayed lo). holdout[2u + v] is the same joint over
    holdout sessions at positions (hi, lo). Session resampling only ever
    sees these category counts, so a multinomial redraw is an exact
    bootstrap of the sampling unit.
    """

    hi: int
    lo: int
    treated: np.ndarray  # shape (4,), int64
    holdout: np.ndarray

    @classmethod
    def empty(cls, hi: int, lo: int) -> "PairBasis":
        return cls(hi=hi, lo=lo, treated=np.zeros(4, dtype=np.int64), holdout=np.zeros(4, dtype=np.int64))

    @property
    def n_treated(self) -> int:
        return int(self.treated.sum())

    @property
    def n_holdout(self) -> int:
        return int(self.holdout.sum())

    def to_counts(self) -> PairCounts:
        n_t, n_h = self.n_treated, self.n_holdout
        counts = PairCounts(
            hi=self.hi,
            lo=self.lo,
            c_hh=int(self.holdout[2] + self.holdout[3]),
            n_hh=n_h,
            c_lh=int(self.treated[2] + self.treated[3]),
            n_lh=n_t,
            c_ll=int(self.holdout[1] + self.holdout[3]),
            n_ll=n_h,
            c_hl=int(self.treated[1] + self.treated[3]),
            n_hl=n_t,
        )
        for name in ("n_hh", "n_lh", "n_ll", "n_hl"):
            if getattr(counts, name) == 0:
                raise InsufficientDataError(
                    f"pair ({self.hi}, {self.lo}): cell {name} ({_CELL_NAMES[name]}) has no sessions"
                )
        return counts


def _fold_batch(bases: dict[tuple[int, int], PairBasis], batch: SessionBatch) -> None:
    is_holdout = batch.arm_pair < 0
    for (hi, lo), basis in bases.items():
        treated = (
            (batch.arm_hi == hi)
            & (batch.arm_lo == lo)
            & batch.applied
            & (batch.lengths >= lo)
        )
        if treated.any():
            x = batch.contacted[treated, hi - 1]
            y = batch.contacted[treated, lo - 1]
            basis.treated += np.bincount(2 * x.astype(np.int64) + y, minlength=4)
        control = is_holdout & (batch.lengths >= lo)
        if control.any():
            u = batch.contacted[control, hi - 1]
            v = batch.contacted[control, lo - 1]
            basis.holdout += np.bincount(2 * u.astype(np.int64) + v, minlength=4)


def _fold_session(bases: dict[tuple[int, int], PairBasis], session: SearchSession) -> None:
    arm = session.arm
    n = len(session)
    if arm.is_swap:
        if not arm.applied:
            return
        key = (arm.hi, arm.lo)
        basis = bases.get(key)
        if basis is None or n < arm.lo:
            return
        x = int(session.slot_at_displayed(arm.hi).contacted)
        y = int(session.slot_at_displayed(arm.lo).contacted)
        basis.treated[2 * x + y] += 1
    else:
        for (hi, lo), basis in bases.items():
            if n >= lo:
                u = int(session.slot_at_displayed(hi).contacted)
                v = int(session.slot_at_displayed(lo).contacted)
                basis.holdout[2 * u + v] += 1


def aggregate_bases(
    log: Iterable, pairs: Sequence[tuple[int, int]]
) -> dict[tuple[int, int], PairBasis]:
    """Single-pass fold of a session or batch stream into per-pair bases."""
    bases = {(hi, lo): PairBasis.empty(hi, lo) for hi, lo in pairs}
    for item in log:
        if isinstance(item, SessionBatch):
            _fold_batch(bases, item)
        else:
            _fold_session(bases, item)
    return bases


def aggregate_pair_counts(log: Iterable, hi: int, lo: int) -> PairCounts:
    """Count the four estimation cells for one pair over a validated log.

    Raises InsufficientDataError naming the first empty cell.
    """
    bases = aggregate_bases(log, [(hi, lo)])
    return bases[(hi, lo)].to_counts()


def estimate_pair_ratio(counts: PairCounts) -> RatioEstimate:
    """Point estimate of theta_hi / theta_lo from the four cell rates.

    The interpretability factor of one half on each rate sum cancels in
    the ratio and is omitted.
    """
    for name in ("n_hh", "n_lh", "n_ll", "n_hl"):
        if getattr(counts, name) == 0:
            raise InsufficientDataError(f"pair ({counts.hi}, {counts.lo}): cell {name} has no sessions")
    r_hi = counts.c_hh / counts.n_hh + counts.c_lh / counts.n_lh
    r_lo = counts.c_ll / counts.n_ll + counts.c_hl / counts.n_hl
    if r_lo == 0.0:
        raise UndefinedRatioError(
            f"pair ({counts.hi}, {counts.lo}): no contacts observed at the lower slot"
        )
    return RatioEstimate(
        hi=counts.hi,
        lo=counts.lo,
        ratio=r_hi / r_lo,
        n_effective=counts.n_lh + counts.n_hh,
    )


def _bootstrap_ratios(
    basis: PairBasis, replications: int, rng: np.random.Generator, redraw_cap: int = 10
) -> np.ndarray:
    n_t, n_h = basis.n_treated, basis.n_holdout
    p_t = basis.treated / n_t
    p_h = basis.holdout / n_h
    ratios: list[np.ndarray] = []
    collected = 0
    attempts = 0
    while collected < replications:
        if attempts >= redraw_cap * replications:
            raise UndefinedRatioError(
                f"pair ({basis.hi}, {basis.lo}): bootstrap exceeded redraw cap, "
                "lower-slot contacts too sparse"
            )
        need = replications - collected
        t = rng.multinomial(n_t, p_t, size=need)
        h = rng.multinomial(n_h, p_h, size=need)
        r_hi = (h[:, 2] + h[:, 3]) / n_h + (t[:, 2] + t[:, 3]) / n_t
        r_lo = (h[:, 1] + h[:, 3]) / n_h + (t[:, 1] + t[:, 3]) / n_t
        valid = r_lo > 0
        ratios.append(r_hi[valid] / r_lo[valid])
        collected += int(valid.sum())
        attempts += need
    return np.concatenate(ratios)[:replications]


def bootstrap_pair_estimate(
    basis: PairBasis, replications: int = 1000, seed: int = 0
) -> RatioEstimate:
    """Percentile bootstrap interval around the pair point estimate.

    Sessions are the resampling unit: the treated arm and the holdout are
    redrawn independently, each preserving the within-session pairing of
    the two observed slots.
    """
    if replications < 100:
        raise ValueError(f"replications must be >= 100, got {replications}")
    point = estimate_pair_ratio(basis.to_counts())
    rng = np.random.default_rng(seed)
    ratios = _bootstrap_ratios(basis, replications, rng)
    low, high = np.percentile(ratios, [2.5, 97.5])
    low = min(float(low), point.ratio)
    high = max(float(high), point.ratio)
    return RatioEstimate(
        hi=basis.hi, lo=basis.lo, ratio=point.ratio, ci=(low, high), n_effective=point.n_effective
    )


def bootstrap_ci(
    log: Iterable, hi: int, lo: int, replications: int = 1000, seed: int = 0
) -> RatioEstimate:
    if replications < 100:
        raise ValueError(f"replications must be >= 100, got {replications}")
    bases = aggregate_bases(log, [(hi, lo)])
    return bootstrap_pair_estimate(bases[(hi, lo)], replications=replications, seed=seed)


def _chain(
    estimates: Sequence[RatioEstimate], interpolate_gap: bool
) -> tuple[dict[int, float], dict[int, float], dict[int, float], dict[int, RatioEstimate | None]]:
    theta = {1: 1.0}
    ci_low = {1: 1.0}
    ci_high = {1: 1.0}
    resolved_by: dict[int, RatioEstimate | None] = {1: None}
    pending = sorted(estimates, key=lambda e: (e.hi, e.lo))
    progress = True
    while pending and progress:
        progress = False
        remaining = []
        for est in pending:
            if est.hi in theta:
                progress = True
                if est.lo not in theta:
                    lo_ci = est.ci if est.ci is not None else (est.ratio, est.ratio)
                    theta[est.lo] = theta[est.hi] / est.ratio
                    ci_low[est.lo] = ci_low[est.hi] / lo_ci[1]
                    ci_high[est.lo] = ci_high[est.hi] / lo_ci[0]
                    resolved_by[est.lo] = est
                    if interpolate_gap and est.lo > est.hi + 1:
                        _fill_gap(theta, ci_low, ci_high, resolved_by, est.hi, est.lo)
            else:
                remaining.append(est)
        pending = remaining
    if pending:
        gaps = ", ".join(f"({e.hi}, {e.lo})" for e in pending)
        raise BrokenChainError(
            f"no path from position 1 reaches pair(s) {gaps}; missing intermediate pair estimates"
        )
    return theta, ci_low, ci_high, resolved_by


def _fill_gap(theta, ci_low, ci_high, resolved_by, hi: int, lo: int) -> None:
    # Log-linear interpolation: ratios compose multiplicatively, so the
    # decay across the gap is split evenly in log space.
    span = lo - hi
    for k in range(hi + 1, lo):
        frac = (k - hi) / span
        for curve in (theta, ci_low, ci_high):
            curve[k] = math.exp(
                math.log(curve[hi]) + frac * (math.log(curve[lo]) - math.log(curve[hi]))
            )
        resolved_by[k] = None


def chain_theta(
    pair_estimates: Sequence[RatioEstimate],
    interpolate_gap: bool = True,
    interface: str = "default",
    source: str = "randomized_estimate",
    created_at: int = 0,
) -> PropensityTable:
    """Compose pair ratios into a propensity table referenced to position 1.

    theta_1 is exactly 1.0; each reachable pair contributes
    theta_lo = theta_hi / ratio. Confidence maps are propagated by applying
    the chain arithmetic to the interval endpoints, which is conservative.
    Positions inside a non-adjacent pair's gap are filled log-linearly when
    interpolate_gap is set.
    """
    if not pair_estimates:
        raise BrokenChainError("no pair estimates supplied")
    theta, ci_low, ci_high, _ = _chain(pair_estimates, interpolate_gap)
    return PropensityTable(
        interface=interface,
        theta=theta,
        ci_low=ci_low,
        ci_high=ci_high,
        source=source,
        created_at=created_at,
    )


@dataclass(frozen=True)
class ReversalStats:
    """How often the lower-displayed result was contacted first."""

    lower_first: int
    n_two_contact: int

    @property
    def present(self) -> bool:
        return self.n_two_contact > 0

    @property
    def rate(self) -> float:
        return self.lower_first / self.n_two_contact if self.n_two_contact else 0.0


def reversal_rate(log: Iterable) -> ReversalStats:
    """Among sessions with exactly two contacts, the lower-slot-first fraction.

    A zero basis is reported as absent (rate reads 0.0, present is False).
    """
    lower_first = 0
    n_two = 0
    for item in log:
        if isinstance(item, SessionBatch):
            n_contacts = item.contacted.sum(axis=1)
            rows = np.nonzero(n_contacts == 2)[0]
            if rows.size == 0:
                continue
            n_two += int(rows.size)
            reversed_cols = item.contacted[rows, ::-1]
            last_col = item.contacted.shape[1] - 1 - np.argmax(reversed_cols, axis=1)
            lower_first += int((item.contact_order[rows, last_col] == 1).sum())
        else:
            contacts = [s for s in item.slots if s.contacted]
            if len(contacts) != 2:
                continue
            n_two += 1
            lower = max(contacts, key=lambda s: s.displayed_position)
            if lower.contact_order == 1:
                lower_first += 1
    return ReversalStats(lower_first=lower_first, n_two_contact=n_two)


@dataclass(frozen=True)
class CostResult:
    metric: str
    relative_delta: float
    p_value: float
    rate_treated: float
    rate_holdout: float
    n_treated: int
    n_holdout: int


def two_proportion_p(x1: int, n1: int, x2: int, n2: int) -> float:
    """Two-sided pooled z-test for a difference in proportions."""
    p1, p2 = x1 / n1, x2 / n2
    pooled = (x1 + x2) / (n1 + n2)
    var = pooled * (1 - pooled) * (1 / n1 + 1 / n2)
    if var == 0:
        return 1.0
    z = (p1 - p2) / math.sqrt(var)
    return float(2.0 * (1.0 - 0.5 * (1.0 + math.erf(abs(z) / math.sqrt(2.0)))))


def program_cost(log: Iterable) -> dict[str, CostResult]:
    """Visitor-level cost of the randomization program vs the holdout.

    A visitor is treated when any of their sessions carries a swap arm,
    applied or not (intent to treat). The metric is the rate of visitors
    with at least one contact.
    """
    visitors: dict[str, list[bool]] = {}
    for item in log:
        if isinstance(item, SessionBatch):
            treated_arr = item.arm_pair >= 0
            contact_arr = item.contacted.any(axis=1)
            base = item.first_index
            for i in range(len(item)):
                entry = visitors.setdefault(f"v{base + i:08d}", [False, False])
                entry[0] |= bool(treated_arr[i])
                entry[1] |= bool(contact_arr[i])
        else:
            entry = visitors.setdefault(item.visitor, [False, False])
            entry[0] |= item.arm.is_swap
            entry[1] |= any(s.contacted for s in item.slots)
    n_t = sum(1 for t, _ in visitors.values() if t)
    n_h = len(visitors) - n_t
    if n_t == 0 or n_h == 0:
        raise InsufficientDataError(
            f"program_cost needs both populations (treated={n_t}, holdout={n_h})"
        )
    x_t = sum(1 for t, c in visitors.values() if t and c)
    x_h = sum(1 for t, c in visitors.values() if not t and c)
    rate_t, rate_h = x_t / n_t, x_h / n_h
    if rate_h == 0:
        delta = 0.0 if rate_t == 0 else math.inf
    else:
        delta = (rate_t - rate_h) / rate_h
    return {
        "visitors_with_contact": CostResult(
            metric="rate of visitors with >= 1 contact",
            relative_delta=delta,
            p_value=two_proportion_p(x_t, n_t, x_h, n_h),
            rate_treated=rate_t,
            rate_holdout=rate_h,
            n_treated=n_t,
            n_holdout=n_h,
        )
    }


def contact_rate_by_position(log: Iterable, holdout_only: bool = True) -> list[tuple[int, int, int]]:
    """(position, impressions, contacts) rows at displayed positions.

    Defaults to the holdout population so the curve reflects natural
    ordering; falls back to all sessions when the log has no holdout.
    """
    imps: dict[int, int] = {}
    cons: dict[int, int] = {}
    imps_all: dict[int, int] = {}
    cons_all: dict[int, int] = {}
    for item in log:
        if isinstance(item, SessionBatch):
            L = item.max_length
            cols = np.arange(L) + 1
            within = cols[None, :] <= item.lengths[:, None]
            holdout_rows = item.arm_pair < 0
            for target_i, target_c, mask in (
                (imps, cons, holdout_rows),
                (imps_all, cons_all, np.ones(len(item), dtype=bool)),
            ):
                imp_counts = within[mask].sum(axis=0)
                con_counts = item.contacted[mask].sum(axis=0)
                for k in range(L):
                    if imp_counts[k]:
                        target_i[k + 1] = target_i.get(k + 1, 0) + int(imp_counts[k])
                        target_c[k + 1] = target_c.get(k + 1, 0) + int(con_counts[k])
        else:
            targets = [(imps_all, cons_all)]
            if not item.arm.is_swap:
                targets.append((imps, cons))
            for s in item.slots:
                for ti, tc in targets:
                    ti[s.displayed_position] = ti.get(s.displayed_position, 0) + 1
                    tc[s.displayed_position] = tc.get(s.displayed_position, 0) + int(s.contacted)
    chosen_i, chosen_c = (imps, cons) if (holdout_only and imps) else (imps_all, cons_all)
    return [(k, chosen_i[k], chosen_c.get(k, 0)) for k in sorted(chosen_i)]


@dataclass
class EstimateResult:
    table: PropensityTable
    estimates: list[RatioEstimate]
    bases: dict[tuple[int, int], PairBasis]
    n_by_position: dict[int, int]
    ts_range: tuple[int, int]


def run_estimate(
    log: Iterable,
    pairs: Sequence[tuple[int, int]],
    interface: str,
    replications: int = 1000,
    seed: int = 0,
    interpolate_gap: bool = True,
) -> EstimateResult:
    """Aggregate, estimate each pair with a bootstrap CI, and chain the table.

    created_at is derived from the newest session timestamp so identical
    inputs always produce byte-identical artifacts.
    """
    ts_min, ts_max = None, None

    def _watch(stream):
        nonlocal ts_min, ts_max
        for item in stream:
            if isinstance(item, SessionBatch):
                lo_ts = int(item.ts_ms.min()) if len(item) else None
                hi_ts = int(item.ts_ms.max()) if len(item) else None
            else:
                lo_ts = hi_ts = item.ts_ms
            if lo_ts is not None:
                ts_min = lo_ts if ts_min is None else min(ts_min, lo_ts)
                ts_max = hi_ts if ts_max is None else max(ts_max, hi_ts)
            yield item

    bases = aggregate_bases(_watch(log), pairs)
    if ts_max is None:
        raise InsufficientDataError("log stream contained no sessions")
    rng = np.random.default_rng(seed)
    estimates = []
    for hi, lo in pairs:
        pair_seed = int(rng.integers(0, 2**63 - 1))
        estimates.append(bootstrap_pair_estimate(bases[(hi, lo)], replications=replications, seed=pair_seed))
    table = chain_theta(
        estimates,
        interpolate_gap=interpolate_gap,
        interface=interface,
        created_at=ts_max,
    )
    _, _, _, resolved_by = _chain(estimates, interpolate_gap)
    n_by_position: dict[int, int] = {}
    first_edge = next((e for e in sorted(estimates, key=lambda e: (e.hi, e.lo)) if e.hi == 1), None)
    for pos in table.positions():
        edge = resolved_by.get(pos)
        if pos == 1:
            n_by_position[pos] = first_edge.n_effective if first_edge else 0
        else:
            n_by_position[pos] = edge.n_effective if edge is not None else 0
    if any(e.ratio < 1.0 for e in estimates):
        logger.info("non-monotone pair ratios present; kept as estimated")
    return EstimateResult(
        table=table,
        estimates=estimates,
        bases=bases,
        n_by_position=n_by_position,
        ts_range=(ts_min, ts_max),
    )

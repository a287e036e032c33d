"""Sample-size and power utilities for planning swap experiments.

Planning uses the unpooled two-proportion closed form; the Monte-Carlo
check runs the pooled z-test actually used on collected counts, which
bounds the discrepancy between the two conventions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm


@dataclass(frozen=True)
class PowerSpec:
    p_hi: float
    p_lo: float
    alpha: float = 0.05
    power: float = 0.80

    def __post_init__(self) -> None:
        for name in ("p_hi", "p_lo"):
            p = getattr(self, name)
            if not 0.0 < p < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {p}")
        if self.p_hi == self.p_lo:
            raise ValueError("p_hi and p_lo must differ for a sample-size query")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0.0 < self.power < 1.0:
            raise ValueError(f"power must be in (0, 1), got {self.power}")


def hypothesized_effect(observed_rate_hi: float, observed_rate_lo: float) -> tuple[float, float]:
    """Centered effect equal to half the observed contact-rate gap.

    Observed gaps embed both position bias and quality, so planning against
    half the gap is a conservative guess for the bias share.
    """
    if observed_rate_lo <= 0 or observed_rate_hi <= 0:
        raise ValueError("observed rates must be positive")
    if observed_rate_hi <= observed_rate_lo:
        raise ValueError("observed_rate_hi must exceed observed_rate_lo")
    mid = (observed_rate_hi + observed_rate_lo) / 2.0
    quarter = (observed_rate_hi - observed_rate_lo) / 4.0
    return (mid + quarter, mid - quarter)


def required_sample(spec: PowerSpec) -> int:
    """Per-cell n for the unpooled two-proportion test at the spec's effect."""
    z_alpha = norm.ppf(1.0 - spec.alpha / 2.0)
    z_power = norm.ppf(spec.power)
    variance = spec.p_hi * (1.0 - spec.p_hi) + spec.p_lo * (1.0 - spec.p_lo)
    delta = spec.p_hi - spec.p_lo
    return math.ceil((z_alpha + z_power) ** 2 * variance / delta**2)


def monte_carlo_power(
    theta_ratio: float,
    base_rate: float,
    n: int,
    alpha: float = 0.05,
    sims: int = 10_000,
    seed: int = 0,
) -> float:
    """Rejection rate of the pooled z-test over simulated pair cells.

    The lower cell contacts at base_rate and the upper cell at
    base_rate * theta_ratio, mirroring a pair whose docs share relevance.
    """
    if sims < 1000:
        raise ValueError(f"sims must be >= 1000, got {sims}")
    p_lo = base_rate
    p_hi = base_rate * theta_ratio
    if not (0.0 < p_lo < 1.0 and 0.0 < p_hi < 1.0):
        raise ValueError("rates derived from theta_ratio and base_rate must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    x_hi = rng.binomial(n, p_hi, size=sims)
    x_lo = rng.binomial(n, p_lo, size=sims)
    pooled = (x_hi + x_lo) / (2.0 * n)
    var = pooled * (1.0 - pooled) * (2.0 / n)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(var > 0, (x_hi - x_lo) / n / np.sqrt(var), 0.0)
    crit = norm.ppf(1.0 - alpha / 2.0)
    return float(np.mean(np.abs(z) > crit))


@dataclass(frozen=True)
class PairPlan:
    hi: int
    lo: int
    p_hi: float
    p_lo: float
    n_per_cell: int | None
    days: float | None
    note: str = ""


def plan_pairs(
    observed_rates: dict[int, float],
    alpha: float = 0.05,
    power: float = 0.80,
    daily_treated_per_arm: float | None = None,
) -> list[PairPlan]:
    """Per-neighbouring-pair sample plan from observed contact rates.

    Emits days-to-significance when a daily treated-arm volume is given;
    pairs whose observed rates do not decay are marked unmeasurable under
    the half-gap rule.
    """
    plans = []
    positions = sorted(observed_rates)
    for hi, lo in zip(positions, positions[1:]):
        rate_hi, rate_lo = observed_rates[hi], observed_rates[lo]
        if rate_hi <= rate_lo or rate_lo <= 0:
            plans.append(
                PairPlan(hi, lo, rate_hi, rate_lo, None, None, "no positive observed gap; half-gap rule undefined")
            )
            continue
        p_hi, p_lo = hypothesized_effect(rate_hi, rate_lo)
        n = required_sample(PowerSpec(p_hi=p_hi, p_lo=p_lo, alpha=alpha, power=power))
        days = n / daily_treated_per_arm if daily_treated_per_arm else None
        plans.append(PairPlan(hi, lo, p_hi, p_lo, n, days))
    return plans

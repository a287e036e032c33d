from __future__ import annotations

import pytest

from rankprop.core import SearchSession, SlotRecord
from rankprop.randpair import HOLDOUT_ARM, ArmAssignment


def make_session(
    n: int = 3,
    arm: ArmAssignment = HOLDOUT_ARM,
    contacted: dict[int, int] | None = None,
    viewed: set[int] | None = None,
    query: str = "q1",
    visitor: str = "v1",
    interface: str = "search",
    ts: int = 1_000,
) -> SearchSession:
    """Hand-built valid session.

    contacted maps displayed position -> contact_order; viewed is the set of
    viewed displayed positions (defaults to all). Natural positions are
    derived from the arm.
    """
    contacted = contacted or {}
    viewed = set(range(1, n + 1)) if viewed is None else viewed
    nat = list(range(1, n + 1))
    if arm.is_swap and arm.applied:
        nat[arm.hi - 1], nat[arm.lo - 1] = arm.lo, arm.hi
    slots = tuple(
        SlotRecord(
            doc=f"doc{nat[k - 1]:02d}",
            natural_position=nat[k - 1],
            displayed_position=k,
            viewed=k in viewed,
            contacted=k in contacted,
            contact_order=contacted.get(k),
        )
        for k in range(1, n + 1)
    )
    return SearchSession(
        query=query, visitor=visitor, interface=interface, ts_ms=ts, arm=arm, slots=slots
    )


def swap_arm(hi: int, lo: int, applied: bool = True) -> ArmAssignment:
    return ArmAssignment(kind="swap", hi=hi, lo=lo, applied=applied)


@pytest.fixture
def session_builder():
    return make_session

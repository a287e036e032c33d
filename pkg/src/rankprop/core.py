"""Domain types, session-log schema validation, and log merging.

One log line is one search session: the displayed list for a single query
with per-slot natural position, displayed position, view flag, contact
flag, and contact order. All types are immutable after validation and safe
to share across threads.

Line schema (field names are part of the wire contract):

    {"query_id": str, "visitor_id": str, "interface_id": str, "ts_ms": int,
     "arm": {"kind": "holdout"|"swap", "hi": int|null, "lo": int|null,
             "applied": bool},
     "slots": [{"doc_id": str, "nat_pos": int, "disp_pos": int,
                "viewed": bool, "contacted": bool,
                "contact_order": int|null}, ...]}
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from rankprop.errors import InvariantError, RejectRateError, SchemaError
from rankprop.randpair import ArmAssignment

logger = logging.getLogger(__name__)

DocumentId = str
VisitorId = str
QueryId = str
InterfaceId = str

PROPENSITY_SOURCES = ("randomized_estimate", "assumed", "simulated_truth")


@dataclass(frozen=True)
class SlotRecord:
    """One displayed result: where it came from, where it showed, what happened.

    ``viewed`` is a scroll-based proxy for examination and ``contacted`` is
    recorded independently; neither implies the other.
    """

    doc: DocumentId
    natural_position: int
    displayed_position: int
    viewed: bool
    contacted: bool
    contact_order: int | None = None


@dataclass(frozen=True)
class SearchSession:
    query: QueryId
    visitor: VisitorId
    interface: InterfaceId
    ts_ms: int
    arm: ArmAssignment
    slots: tuple[SlotRecord, ...]

    def __len__(self) -> int:
        return len(self.slots)

    def slot_at_displayed(self, position: int) -> SlotRecord:
        return self.slots[position - 1]

    @property
    def n_contacts(self) -> int:
        return sum(1 for s in self.slots if s.contacted)


@dataclass(frozen=True)
class ProfessionalHistory:
    """Per-document impression history feeding the historical-rate features."""

    doc: DocumentId
    events: tuple[tuple[int, bool], ...]  # (displayed position, contacted)

    def __post_init__(self) -> None:
        for pos, _ in self.events:
            if pos < 1:
                raise ValueError(f"history position must be >= 1, got {pos}")


@dataclass(frozen=True)
class PropensityTable:
    """Relative examination propensity per position, referenced to position 1.

    theta[1] is exactly 1.0 by construction. Monotonicity is deliberately
    not enforced: real curves show small reversals at the bottom of pages.
    """

    interface: InterfaceId
    theta: dict[int, float]
    ci_low: dict[int, float]
    ci_high: dict[int, float]
    source: str
    created_at: int

    def __post_init__(self) -> None:
        if self.source not in PROPENSITY_SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        if 1 not in self.theta or self.theta[1] != 1.0:
            raise ValueError("theta[1] must be exactly 1.0 (reference position)")
        for pos, val in self.theta.items():
            if val <= 0:
                raise ValueError(f"theta[{pos}] must be positive, got {val}")
        if set(self.ci_low) != set(self.theta) or set(self.ci_high) != set(self.theta):
            raise ValueError("ci maps must cover exactly the theta positions")

    @classmethod
    def from_theta(
        cls,
        interface: InterfaceId,
        theta: dict[int, float],
        source: str = "simulated_truth",
        created_at: int = 0,
    ) -> "PropensityTable":
        """Table with degenerate intervals, for known or assumed curves."""
        theta = {int(k): float(v) for k, v in theta.items()}
        return cls(
            interface=interface,
            theta=theta,
            ci_low=dict(theta),
            ci_high=dict(theta),
            source=source,
            created_at=created_at,
        )

    def covers(self, position: int) -> bool:
        return position in self.theta

    def positions(self) -> list[int]:
        return sorted(self.theta)

    def to_dict(self) -> dict:
        return {
            "interface_id": self.interface,
            "theta": {str(k): self.theta[k] for k in sorted(self.theta)},
            "ci_low": {str(k): self.ci_low[k] for k in sorted(self.ci_low)},
            "ci_high": {str(k): self.ci_high[k] for k in sorted(self.ci_high)},
            "source": self.source,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PropensityTable":
        try:
            return cls(
                interface=str(d["interface_id"]),
                theta={int(k): float(v) for k, v in d["theta"].items()},
                ci_low={int(k): float(v) for k, v in d["ci_low"].items()},
                ci_high={int(k): float(v) for k, v in d["ci_high"].items()},
                source=str(d["source"]),
                created_at=int(d["created_at"]),
            )
        except KeyError as exc:
            raise SchemaError(f"propensity artifact missing field {exc}") from exc


def _require(record: dict, key: str, kind: type | tuple[type, ...]):
    if key not in record:
        raise SchemaError(f"missing field {key!r}")
    value = record[key]
    if not isinstance(value, kind):
        raise SchemaError(f"field {key!r} has wrong type {type(value).__name__}")
    return value


def _parse_arm(raw: dict) -> ArmAssignment:
    kind = _require(raw, "kind", str)
    applied = _require(raw, "applied", bool)
    if kind == "holdout":
        if applied:
            raise InvariantError("holdout arm marked applied")
        return ArmAssignment(kind="holdout")
    if kind == "swap":
        hi = _require(raw, "hi", int)
        lo = _require(raw, "lo", int)
        try:
            return ArmAssignment(kind="swap", hi=hi, lo=lo, applied=applied)
        except ValueError as exc:
            raise InvariantError(str(exc)) from exc
    raise SchemaError(f"unknown arm kind {kind!r}")


def _parse_slot(raw: dict) -> SlotRecord:
    contacted = _require(raw, "contacted", bool)
    order = raw.get("contact_order")
    if order is not None and not isinstance(order, int):
        raise SchemaError("contact_order must be an integer or null")
    return SlotRecord(
        doc=_require(raw, "doc_id", str),
        natural_position=_require(raw, "nat_pos", int),
        displayed_position=_require(raw, "disp_pos", int),
        viewed=_require(raw, "viewed", bool),
        contacted=contacted,
        contact_order=order,
    )


def validate_session(raw) -> SearchSession:
    """Parse and validate one log record (JSON text or an already-parsed dict).

    Raises SchemaError for malformed records and InvariantError when a
    well-formed record contradicts itself (duplicate positions, a swap arm
    flagged applied with no visible swap, bad contact orders).
    """
    if isinstance(raw, (str, bytes)):
        try:
            record = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"record is not valid JSON: {exc}") from exc
    else:
        record = raw
    if not isinstance(record, dict):
        raise SchemaError("record must be a JSON object")

    arm = _parse_arm(_require(record, "arm", dict))
    raw_slots = _require(record, "slots", list)
    if not raw_slots:
        raise InvariantError("session has zero slots")
    slots = tuple(_parse_slot(s) for s in raw_slots)

    n = len(slots)
    disp = [s.displayed_position for s in slots]
    if sorted(disp) != list(range(1, n + 1)):
        raise InvariantError(f"displayed positions must be 1..{n} without gaps, got {disp}")
    nat = [s.natural_position for s in slots]
    if sorted(nat) != list(range(1, n + 1)):
        raise InvariantError("natural positions are not a permutation of displayed positions")

    for s in slots:
        if s.contacted and s.contact_order is None:
            raise InvariantError(f"contacted slot at position {s.displayed_position} lacks contact_order")
        if not s.contacted and s.contact_order is not None:
            raise InvariantError(f"uncontacted slot at position {s.displayed_position} has contact_order")
    orders = sorted(s.contact_order for s in slots if s.contacted)
    if orders != list(range(1, len(orders) + 1)):
        raise InvariantError(f"contact orders must form a permutation of 1..{len(orders)}, got {orders}")

    by_disp = sorted(slots, key=lambda s: s.displayed_position)
    if arm.is_swap and arm.applied:
        if n < arm.lo:
            raise InvariantError(f"swap ({arm.hi}, {arm.lo}) marked applied on a list of length {n}")
        for s in by_disp:
            k = s.displayed_position
            expected = arm.lo if k == arm.hi else arm.hi if k == arm.lo else k
            if s.natural_position != expected:
                if k in (arm.hi, arm.lo) and s.natural_position == k:
                    raise InvariantError("swap not applied despite applied=true flag")
                raise InvariantError(
                    f"slot displayed at {k} has natural position {s.natural_position}, "
                    f"expected {expected} under applied swap ({arm.hi}, {arm.lo})"
                )
    else:
        for s in by_disp:
            if s.natural_position != s.displayed_position:
                raise InvariantError(
                    f"natural and displayed positions differ at {s.displayed_position} "
                    "but no applied swap explains it"
                )

    return SearchSession(
        query=_require(record, "query_id", str),
        visitor=_require(record, "visitor_id", str),
        interface=_require(record, "interface_id", str),
        ts_ms=_require(record, "ts_ms", int),
        arm=arm,
        slots=slots,
    )


def session_to_dict(session: SearchSession) -> dict:
    arm = session.arm
    return {
        "query_id": session.query,
        "visitor_id": session.visitor,
        "interface_id": session.interface,
        "ts_ms": session.ts_ms,
        "arm": {"kind": arm.kind, "hi": arm.hi, "lo": arm.lo, "applied": arm.applied},
        "slots": [
            {
                "doc_id": s.doc,
                "nat_pos": s.natural_position,
                "disp_pos": s.displayed_position,
                "viewed": s.viewed,
                "contacted": s.contacted,
                "contact_order": s.contact_order,
            }
            for s in session.slots
        ],
    }


def session_to_json(session: SearchSession) -> str:
    return json.dumps(session_to_dict(session), separators=(",", ":"))


def write_log(sessions: Iterable[SearchSession], path: str | Path) -> int:
    """Write sessions as line-delimited JSON; returns the line count."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for session in sessions:
            fh.write(session_to_json(session))
            fh.write("\n")
            count += 1
    return count


@dataclass
class MergeStats:
    accepted: int = 0
    rejected: int = 0
    files: int = 0
    reject_examples: list[str] = field(default_factory=list)

    @property
    def total(self) -> int:
        return self.accepted + self.rejected


def merge_logs(
    paths: Sequence[str | Path],
    reject_threshold: float = 0.1,
    stats: MergeStats | None = None,
) -> Iterator[SearchSession]:
    """Lazily yield validated sessions from line-delimited log files.

    Files are read in the order given; lines within a file are yielded in
    file order, which for append-only logs is timestamp order. No global
    ordering across files is attempted. Invalid lines are counted and
    skipped; the running reject rate is checked as each file completes and
    aborts the stream with RejectRateError when it exceeds the threshold.
    """
    if stats is None:
        stats = MergeStats()
    for path in paths:
        path = Path(path)
        try:
            fh = open(path, "r", encoding="utf-8")
        except OSError as exc:
            raise RejectRateError(f"cannot read log file {path}: {exc}") from exc
        with fh:
            for line in fh:
                if not line.strip():
                    continue
                try:
                    yield validate_session(line)
                    stats.accepted += 1
                except (SchemaError, InvariantError) as exc:
                    stats.rejected += 1
                    if len(stats.reject_examples) < 5:
                        stats.reject_examples.append(f"{path.name}: {exc}")
                    logger.debug("rejected line in %s: %s", path, exc)
        stats.files += 1
        if stats.total > 0 and stats.rejected / stats.total > reject_threshold:
            raise RejectRateError(
                f"reject rate {stats.rejected}/{stats.total} exceeds threshold "
                f"{reject_threshold:.3f} after {path}"
            )
    if stats.rejected:
        logger.info("merged %d sessions, rejected %d lines", stats.accepted, stats.rejected)


def save_propensity_artifact(table: PropensityTable, path: str | Path, meta: dict | None = None) -> None:
    payload = table.to_dict()
    if meta is not None:
        payload["meta"] = meta
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_propensity_artifact(path: str | Path) -> tuple[PropensityTable, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    table = PropensityTable.from_dict(payload)
    return table, payload.get("meta", {})

"""Synthetic search-log generation under parameterized user-behavior models.

Every downstream estimator is validated against corpora produced here,
where true relevance and true examination propensities are known. Five
behavior kinds are supported:

  pbm        independent per-slot examination with probability theta[k],
             contact when examined and the relevance draw succeeds
  cascade    top-to-bottom scan, contact ends the session
  dbn        top-to-bottom scan, contact with probability R(d), stop after
             a contact with probability satisfaction(d)
  ubm        examination depends on position and distance since the last
             contact, gamma[(k, j)], defaulting to theta[k] * delta**j
  trust_pbm  examination as pbm, but contact probability depends on the
             position itself (eps_plus[k] on a successful relevance draw,
             eps_minus[k] otherwise), breaking separability

Corpus generation is vectorized in fixed-size chunks; a given (config,
seed) always produces a bit-identical log. The per-session reference
implementation (simulate_session) keeps the semantics auditable and is
used by the unit tests; the chunked path is the one the corpus writer and
the large-scale validation suites run.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from rankprop.core import SearchSession, SlotRecord, session_to_json
from rankprop.randpair import AllocationPlan, ArmAssignment, HOLDOUT_ARM, assign_arms_batch

logger = logging.getLogger(__name__)

CHUNK_SESSIONS = 200_000
DEFAULT_START_TS_MS = 1_700_000_000_000

BEHAVIOR_KINDS = ("pbm", "cascade", "dbn", "ubm", "trust_pbm")
RANKER_KINDS = ("by_relevance", "by_noisy_relevance", "fixed_permutation", "by_score_table")


@dataclass(frozen=True)
class Catalog:
    """Documents with position-invariant true match probabilities."""

    docs: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        seen = set()
        for doc_id, rel in self.docs:
            if not doc_id:
                raise ValueError("empty doc_id in catalog")
            if doc_id in seen:
                raise ValueError(f"duplicate doc_id {doc_id!r}")
            seen.add(doc_id)
            if not 0.0 <= rel <= 1.0:
                raise ValueError(f"relevance of {doc_id!r} must be in [0, 1], got {rel}")

    def __len__(self) -> int:
        return len(self.docs)

    @property
    def ids(self) -> list[str]:
        return [d for d, _ in self.docs]

    @property
    def relevance(self) -> np.ndarray:
        return np.asarray([r for _, r in self.docs], dtype=np.float64)

    def relevance_of(self, doc_id: str) -> float:
        for d, r in self.docs:
            if d == doc_id:
                return r
        raise KeyError(doc_id)

    def to_dict(self) -> list[dict]:
        return [{"doc_id": d, "relevance": r} for d, r in self.docs]

    @classmethod
    def from_dict(cls, rows: list[dict]) -> "Catalog":
        return cls(tuple((str(r["doc_id"]), float(r["relevance"])) for r in rows))


def _check_prob_map(name: str, m: dict) -> None:
    for key, val in m.items():
        if not 0.0 <= val <= 1.0:
            raise ValueError(f"{name}[{key!r}] must be in [0, 1], got {val}")


@dataclass(frozen=True)
class BehaviorConfig:
    kind: str
    theta: dict[int, float] | None = None
    satisfaction: dict[str, float] | None = None
    gamma: dict[tuple[int, int], float] | None = None
    delta: float = 0.9
    eps_plus: dict[int, float] | None = None
    eps_minus: dict[int, float] | None = None

    def __post_init__(self) -> None:
        if self.kind not in BEHAVIOR_KINDS:
            raise ValueError(f"unknown behavior kind {self.kind!r}")
        if self.kind in ("pbm", "trust_pbm", "ubm") and not self.theta:
            raise ValueError(f"{self.kind} requires a theta map")
        if self.kind == "dbn" and self.satisfaction is None:
            raise ValueError("dbn requires a satisfaction map")
        if self.kind == "trust_pbm" and (self.eps_plus is None or self.eps_minus is None):
            raise ValueError("trust_pbm requires eps_plus and eps_minus maps")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must be in [0, 1], got {self.delta}")
        for name in ("theta", "eps_plus", "eps_minus", "satisfaction"):
            m = getattr(self, name)
            if m:
                _check_prob_map(name, m)
        if self.gamma:
            _check_prob_map("gamma", self.gamma)

    def theta_row(self, max_position: int) -> np.ndarray:
        """theta for positions 1..max_position; missing positions are an error."""
        assert self.theta is not None
        row = np.empty(max_position, dtype=np.float64)
        for k in range(1, max_position + 1):
            if k not in self.theta:
                raise ValueError(f"behavior config does not cover position {k}")
            row[k - 1] = self.theta[k]
        return row

    def eps_rows(self, max_position: int) -> tuple[np.ndarray, np.ndarray]:
        assert self.eps_plus is not None and self.eps_minus is not None
        plus = np.empty(max_position, dtype=np.float64)
        minus = np.empty(max_position, dtype=np.float64)
        for k in range(1, max_position + 1):
            if k not in self.eps_plus or k not in self.eps_minus:
                raise ValueError(f"behavior config does not cover position {k}")
            plus[k - 1] = self.eps_plus[k]
            minus[k - 1] = self.eps_minus[k]
        return plus, minus

    def gamma_at(self, position: int, distance: int) -> float:
        if self.gamma is not None:
            if (position, distance) not in self.gamma:
                raise ValueError(f"gamma does not cover (position={position}, distance={distance})")
            return self.gamma[(position, distance)]
        assert self.theta is not None
        if position not in self.theta:
            raise ValueError(f"behavior config does not cover position {position}")
        return self.theta[position] * self.delta**distance

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.theta is not None:
            d["theta"] = {str(k): v for k, v in self.theta.items()}
        if self.satisfaction is not None:
            d["satisfaction"] = dict(self.satisfaction)
        if self.gamma is not None:
            d["gamma"] = {f"{k}:{j}": v for (k, j), v in self.gamma.items()}
        if self.kind == "ubm":
            d["delta"] = self.delta
        if self.eps_plus is not None:
            d["eps_plus"] = {str(k): v for k, v in self.eps_plus.items()}
        if self.eps_minus is not None:
            d["eps_minus"] = {str(k): v for k, v in self.eps_minus.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BehaviorConfig":
        gamma = None
        if "gamma" in d:
            gamma = {}
            for key, val in d["gamma"].items():
                k, j = key.split(":")
                gamma[(int(k), int(j))] = float(val)
        return cls(
            kind=str(d["kind"]),
            theta={int(k): float(v) for k, v in d["theta"].items()} if "theta" in d else None,
            satisfaction={str(k): float(v) for k, v in d["satisfaction"].items()}
            if "satisfaction" in d
            else None,
            gamma=gamma,
            delta=float(d.get("delta", 0.9)),
            eps_plus={int(k): float(v) for k, v in d["eps_plus"].items()} if "eps_plus" in d else None,
            eps_minus={int(k): float(v) for k, v in d["eps_minus"].items()} if "eps_minus" in d else None,
        )


@dataclass(frozen=True)
class RankerStub:
    """Produces the natural (pre-randomization) order over catalog docs."""

    kind: str
    noise_sd: float = 0.0
    order: tuple[str, ...] | None = None
    scores: dict[str, float] | None = None

    def __post_init__(self) -> None:
        if self.kind not in RANKER_KINDS:
            raise ValueError(f"unknown ranker kind {self.kind!r}")
        if self.kind == "fixed_permutation" and not self.order:
            raise ValueError("fixed_permutation requires an order")
        if self.kind == "by_score_table" and not self.scores:
            raise ValueError("by_score_table requires scores")
        if self.kind == "by_noisy_relevance" and self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")

    @property
    def per_session(self) -> bool:
        return self.kind == "by_noisy_relevance"

    def fixed_order_indices(self, catalog: Catalog) -> np.ndarray:
        """Catalog indices in natural order, for the deterministic kinds."""
        ids = catalog.ids
        if self.kind == "by_relevance":
            keyed = sorted(range(len(ids)), key=lambda i: (-catalog.docs[i][1], ids[i]))
            return np.asarray(keyed, dtype=np.int64)
        if self.kind == "by_score_table":
            assert self.scores is not None
            missing = [d for d in ids if d not in self.scores]
            if missing:
                raise ValueError(f"score table missing docs: {missing[:3]}")
            keyed = sorted(range(len(ids)), key=lambda i: (-self.scores[ids[i]], ids[i]))
            return np.asarray(keyed, dtype=np.int64)
        if self.kind == "fixed_permutation":
            assert self.order is not None
            index = {d: i for i, d in enumerate(ids)}
            if sorted(self.order) != sorted(ids):
                raise ValueError("fixed_permutation must be a permutation of the catalog")
            return np.asarray([index[d] for d in self.order], dtype=np.int64)
        raise ValueError(f"{self.kind} has no fixed order")

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind == "by_noisy_relevance":
            d["noise_sd"] = self.noise_sd
        if self.order is not None:
            d["order"] = list(self.order)
        if self.scores is not None:
            d["scores"] = dict(self.scores)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RankerStub":
        return cls(
            kind=str(d["kind"]),
            noise_sd=float(d.get("noise_sd", 0.0)),
            order=tuple(d["order"]) if "order" in d else None,
            scores={str(k): float(v) for k, v in d["scores"].items()} if "scores" in d else None,
        )


@dataclass(frozen=True)
class SimConfig:
    """Full description of one synthetic corpus."""

    interface_id: str
    catalog: Catalog
    behavior: BehaviorConfig
    ranker: RankerStub
    plan: AllocationPlan
    n_sessions: int
    seed: int
    list_length: int | None = None
    length_range: tuple[int, int] | None = None
    start_ts_ms: int = DEFAULT_START_TS_MS

    def __post_init__(self) -> None:
        if self.n_sessions <= 0:
            raise ValueError(f"n_sessions must be positive, got {self.n_sessions}")
        if not self.interface_id:
            raise ValueError("interface_id must be non-empty")
        if self.list_length is not None and not 1 <= self.list_length <= len(self.catalog):
            raise ValueError("list_length must be in [1, catalog size]")
        if self.length_range is not None:
            lo, hi = self.length_range
            if not 1 <= lo <= hi <= len(self.catalog):
                raise ValueError("length_range must satisfy 1 <= min <= max <= catalog size")

    @property
    def max_length(self) -> int:
        if self.length_range is not None:
            return self.length_range[1]
        return self.list_length if self.list_length is not None else len(self.catalog)

    def to_dict(self) -> dict:
        d = {
            "interface_id": self.interface_id,
            "seed": self.seed,
            "n_sessions": self.n_sessions,
            "start_ts_ms": self.start_ts_ms,
            "catalog": self.catalog.to_dict(),
            "behavior": self.behavior.to_dict(),
            "ranker": self.ranker.to_dict(),
            "plan": self.plan.to_dict(),
        }
        if self.list_length is not None:
            d["list_length"] = self.list_length
        if self.length_range is not None:
            d["length_range"] = list(self.length_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        return cls(
            interface_id=str(d["interface_id"]),
            catalog=Catalog.from_dict(d["catalog"]),
            behavior=BehaviorConfig.from_dict(d["behavior"]),
            ranker=RankerStub.from_dict(d["ranker"]),
            plan=AllocationPlan.from_dict(d["plan"]),
            n_sessions=int(d["n_sessions"]),
            seed=int(d["seed"]),
            list_length=int(d["list_length"]) if "list_length" in d else None,
            length_range=tuple(int(x) for x in d["length_range"]) if "length_range" in d else None,
            start_ts_ms=int(d.get("start_ts_ms", DEFAULT_START_TS_MS)),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "SimConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def simulate_session(
    ranking: Sequence[str],
    catalog: Catalog,
    cfg: BehaviorConfig,
    rng: np.random.Generator,
) -> list[SlotRecord]:
    """Reference per-session simulation on an already-displayed ranking.

    Positions are 1..len(ranking) in display order; natural positions are
    filled in by the caller when the ranking came out of a swap.
    """
    rel = {d: r for d, r in catalog.docs}
    n = len(ranking)
    viewed = [False] * n
    contacted = [False] * n
    order: list[int | None] = [None] * n

    if cfg.kind == "pbm":
        row = cfg.theta_row(n)
        for k in range(n):
            examined = rng.random() < row[k]
            viewed[k] = examined
            contacted[k] = examined and rng.random() < rel[ranking[k]]
        _assign_uniform_order(contacted, order, rng)
    elif cfg.kind == "trust_pbm":
        row = cfg.theta_row(n)
        plus, minus = cfg.eps_rows(n)
        for k in range(n):
            examined = rng.random() < row[k]
            viewed[k] = examined
            relevant = rng.random() < rel[ranking[k]]
            p_contact = plus[k] if relevant else minus[k]
            contacted[k] = examined and rng.random() < p_contact
        _assign_uniform_order(contacted, order, rng)
    elif cfg.kind == "cascade":
        for k in range(n):
            viewed[k] = True
            if rng.random() < rel[ranking[k]]:
                contacted[k] = True
                order[k] = 1
                break
    elif cfg.kind == "dbn":
        assert cfg.satisfaction is not None
        count = 0
        for k in range(n):
            viewed[k] = True
            doc = ranking[k]
            if rng.random() < rel[doc]:
                contacted[k] = True
                count += 1
                order[k] = count
                sat = cfg.satisfaction.get(doc)
                if sat is None:
                    raise ValueError(f"satisfaction map does not cover doc {doc!r}")
                if rng.random() < sat:
                    break
    elif cfg.kind == "ubm":
        last = 0
        count = 0
        for k in range(n):
            pos = k + 1
            gamma = cfg.gamma_at(pos, pos - last)
            examined = rng.random() < gamma
            viewed[k] = examined
            if examined and rng.random() < rel[ranking[k]]:
                contacted[k] = True
                count += 1
                order[k] = count
                last = pos
    else:  # pragma: no cover - guarded by BehaviorConfig
        raise ValueError(f"unknown behavior kind {cfg.kind!r}")

    return [
        SlotRecord(
            doc=ranking[k],
            natural_position=k + 1,
            displayed_position=k + 1,
            viewed=viewed[k],
            contacted=contacted[k],
            contact_order=order[k],
        )
        for k in range(n)
    ]


def _assign_uniform_order(contacted: list[bool], order: list[int | None], rng: np.random.Generator) -> None:
    # Order-agnostic models get a uniformly random contact sequence so the
    # reversal diagnostic can separate them from strictly sequential models.
    hits = [k for k, c in enumerate(contacted) if c]
    if not hits:
        return
    perm = rng.permutation(len(hits))
    for rank, k in zip(perm, hits):
        order[k] = int(rank) + 1


@dataclass
class SessionBatch:
    """A chunk of simulated sessions in columnar form.

    Slot matrices are (n, L) with L the corpus-wide maximum list length;
    columns at or beyond a session's length hold -1 / False / 0.
    """

    interface_id: str
    doc_ids: list[str]
    first_index: int
    ts_ms: np.ndarray
    lengths: np.ndarray
    arm_pair: np.ndarray  # -1 holdout, else index into plan.swap_pairs
    arm_hi: np.ndarray
    arm_lo: np.ndarray
    applied: np.ndarray
    nat_docidx: np.ndarray
    disp_docidx: np.ndarray
    viewed: np.ndarray
    contacted: np.ndarray
    contact_order: np.ndarray

    def __len__(self) -> int:
        return int(self.ts_ms.shape[0])

    @property
    def max_length(self) -> int:
        return int(self.nat_docidx.shape[1])

    def visitor_id(self, i: int) -> str:
        return f"v{self.first_index + i:08d}"

    def query_id(self, i: int) -> str:
        return f"q{self.first_index + i:08d}"

    def arm_of(self, i: int) -> ArmAssignment:
        if self.arm_pair[i] < 0:
            return HOLDOUT_ARM
        return ArmAssignment(
            kind="swap",
            hi=int(self.arm_hi[i]),
            lo=int(self.arm_lo[i]),
            applied=bool(self.applied[i]),
        )

    def iter_sessions(self) -> Iterator[SearchSession]:
        for i in range(len(self)):
            n = int(self.lengths[i])
            arm = self.arm_of(i)
            nat_of_disp = _natural_positions(n, arm)
            slots = tuple(
                SlotRecord(
                    doc=self.doc_ids[self.disp_docidx[i, k]],
                    natural_position=nat_of_disp[k],
                    displayed_position=k + 1,
                    viewed=bool(self.viewed[i, k]),
                    contacted=bool(self.contacted[i, k]),
                    contact_order=int(self.contact_order[i, k]) if self.contact_order[i, k] else None,
                )
                for k in range(n)
            )
            yield SearchSession(
                query=self.query_id(i),
                visitor=self.visitor_id(i),
                interface=self.interface_id,
                ts_ms=int(self.ts_ms[i]),
                arm=arm,
                slots=slots,
            )


def _natural_positions(n: int, arm: ArmAssignment) -> list[int]:
    nat = list(range(1, n + 1))
    if arm.is_swap and arm.applied:
        nat[arm.hi - 1], nat[arm.lo - 1] = arm.lo, arm.hi
    return nat


def simulate_batches(cfg: SimConfig, chunk_size: int = CHUNK_SESSIONS) -> Iterator[SessionBatch]:
    """Vectorized corpus generation, yielding fixed-size chunks.

    Deterministic for a given (config, seed); chunk_size participates in
    the random stream layout, so leave it at the default when
    reproducibility against previous runs matters.
    """
    rng = np.random.default_rng(cfg.seed)
    catalog = cfg.catalog
    n_docs = len(catalog)
    rel = catalog.relevance
    L = cfg.max_length
    kind = cfg.behavior.kind

    theta_row = cfg.behavior.theta_row(L) if kind in ("pbm", "trust_pbm", "ubm") else None
    eps = cfg.behavior.eps_rows(L) if kind == "trust_pbm" else None
    sat_by_doc = None
    if kind == "dbn":
        assert cfg.behavior.satisfaction is not None
        missing = [d for d in catalog.ids if d not in cfg.behavior.satisfaction]
        if missing:
            raise ValueError(f"satisfaction map missing docs: {missing[:3]}")
        sat_by_doc = np.asarray([cfg.behavior.satisfaction[d] for d in catalog.ids], dtype=np.float64)
    gamma_grid = None
    if kind == "ubm":
        gamma_grid = np.zeros((L + 1, L + 1), dtype=np.float64)
        for pos in range(1, L + 1):
            for j in range(1, pos + 1):
                gamma_grid[pos, j] = cfg.behavior.gamma_at(pos, j)

    fixed_order = None if cfg.ranker.per_session else cfg.ranker.fixed_order_indices(catalog)

    pair_hi = np.asarray([p[0] for p in cfg.plan.swap_pairs] or [0], dtype=np.int64)
    pair_lo = np.asarray([p[1] for p in cfg.plan.swap_pairs] or [0], dtype=np.int64)

    produced = 0
    while produced < cfg.n_sessions:
        m = min(chunk_size, cfg.n_sessions - produced)
        idx = np.arange(produced, produced + m, dtype=np.int64)
        visitors = [f"v{i:08d}" for i in idx]
        arm_pair = assign_arms_batch(visitors, cfg.plan)
        is_swap = arm_pair >= 0
        arm_hi = np.where(is_swap, pair_hi[np.clip(arm_pair, 0, None)], 0).astype(np.int16)
        arm_lo = np.where(is_swap, pair_lo[np.clip(arm_pair, 0, None)], 0).astype(np.int16)

        if cfg.length_range is not None:
            lo_len, hi_len = cfg.length_range
            lengths = rng.integers(lo_len, hi_len + 1, size=m).astype(np.int16)
        else:
            lengths = np.full(m, cfg.list_length or n_docs, dtype=np.int16)

        cols = np.arange(L, dtype=np.int16)
        within = cols[None, :] < lengths[:, None]

        if fixed_order is not None:
            nat = np.where(within, fixed_order[:L][None, :].astype(np.int32), -1)
        else:
            noise = rng.normal(0.0, cfg.ranker.noise_sd, size=(m, n_docs))
            scores = rel[None, :] + noise
            full = np.argsort(-scores, axis=1, kind="stable").astype(np.int32)
            nat = np.where(within, full[:, :L], -1)

        disp = nat.copy()
        applied = is_swap & (lengths >= arm_lo)
        rows = np.nonzero(applied)[0]
        if rows.size:
            hi_cols = arm_hi[rows].astype(np.int64) - 1
            lo_cols = arm_lo[rows].astype(np.int64) - 1
            tmp = disp[rows, hi_cols].copy()
            disp[rows, hi_cols] = disp[rows, lo_cols]
            disp[rows, lo_cols] = tmp

        rel_disp = np.where(disp >= 0, rel[np.clip(disp, 0, None)], 0.0)

        viewed = np.zeros((m, L), dtype=bool)
        contacted = np.zeros((m, L), dtype=bool)

        if kind == "pbm":
            u_view = rng.random((m, L))
            u_rel = rng.random((m, L))
            viewed = (u_view < theta_row[None, :]) & within
            contacted = viewed & (u_rel < rel_disp)
            order = _uniform_order(contacted, rng)
        elif kind == "trust_pbm":
            u_view = rng.random((m, L))
            u_rel = rng.random((m, L))
            u_con = rng.random((m, L))
            viewed = (u_view < theta_row[None, :]) & within
            relevant = u_rel < rel_disp
            p_contact = np.where(relevant, eps[0][None, :], eps[1][None, :])
            contacted = viewed & (u_con < p_contact)
            order = _uniform_order(contacted, rng)
        elif kind == "cascade":
            u_rel = rng.random((m, L))
            alive = np.ones(m, dtype=bool)
            for k in range(L):
                cur = alive & within[:, k]
                viewed[:, k] = cur
                hit = cur & (u_rel[:, k] < rel_disp[:, k])
                contacted[:, k] = hit
                alive &= ~hit
            order = np.where(contacted, 1, 0).astype(np.int16)
        elif kind == "dbn":
            u_rel = rng.random((m, L))
            u_stop = rng.random((m, L))
            sat_disp = np.where(disp >= 0, sat_by_doc[np.clip(disp, 0, None)], 0.0)
            alive = np.ones(m, dtype=bool)
            for k in range(L):
                cur = alive & within[:, k]
                viewed[:, k] = cur
                hit = cur & (u_rel[:, k] < rel_disp[:, k])
                contacted[:, k] = hit
                alive &= ~(hit & (u_stop[:, k] < sat_disp[:, k]))
            order = _sequential_order(contacted)
        elif kind == "ubm":
            u_view = rng.random((m, L))
            u_rel = rng.random((m, L))
            last = np.zeros(m, dtype=np.int64)
            for k in range(L):
                pos = k + 1
                gamma = gamma_grid[pos, pos - last]
                examined = within[:, k] & (u_view[:, k] < gamma)
                viewed[:, k] = examined
                hit = examined & (u_rel[:, k] < rel_disp[:, k])
                contacted[:, k] = hit
                last = np.where(hit, pos, last)
            order = _sequential_order(contacted)
        else:  # pragma: no cover
            raise ValueError(f"unknown behavior kind {kind!r}")

        yield SessionBatch(
            interface_id=cfg.interface_id,
            doc_ids=catalog.ids,
            first_index=produced,
            ts_ms=cfg.start_ts_ms + idx,
            lengths=lengths,
            arm_pair=arm_pair,
            arm_hi=arm_hi,
            arm_lo=arm_lo,
            applied=applied,
            nat_docidx=nat,
            disp_docidx=disp,
            viewed=viewed,
            contacted=contacted,
            contact_order=order,
        )
        produced += m


def _uniform_order(contacted: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    keys = rng.random(contacted.shape)
    keys = np.where(contacted, keys, 2.0)
    ranks = np.argsort(np.argsort(keys, axis=1, kind="stable"), axis=1)
    return np.where(contacted, ranks + 1, 0).astype(np.int16)


def _sequential_order(contacted: np.ndarray) -> np.ndarray:
    running = np.cumsum(contacted, axis=1)
    return np.where(contacted, running, 0).astype(np.int16)


def iter_corpus_sessions(cfg: SimConfig, chunk_size: int = CHUNK_SESSIONS) -> Iterator[SearchSession]:
    for batch in simulate_batches(cfg, chunk_size=chunk_size):
        yield from batch.iter_sessions()


@dataclass
class SimStats:
    n_sessions: int
    n_applied_swaps: int
    path: Path | None = None
    arm_counts: dict[str, int] = field(default_factory=dict)


def simulate_corpus(cfg: SimConfig, out_path: str | Path) -> SimStats:
    """Generate a corpus and write it as line-delimited JSON."""
    out_path = Path(out_path)
    n_applied = 0
    arm_counts: dict[str, int] = {}
    with open(out_path, "w", encoding="utf-8") as fh:
        for batch in simulate_batches(cfg):
            n_applied += int(batch.applied.sum())
            labels, counts = np.unique(batch.arm_pair, return_counts=True)
            for label, count in zip(labels, counts):
                key = "holdout" if label < 0 else f"swap:{cfg.plan.swap_pairs[label][0]}:{cfg.plan.swap_pairs[label][1]}"
                arm_counts[key] = arm_counts.get(key, 0) + int(count)
            for session in batch.iter_sessions():
                fh.write(session_to_json(session))
                fh.write("\n")
    logger.info("simulated %d sessions to %s", cfg.n_sessions, out_path)
    return SimStats(
        n_sessions=cfg.n_sessions,
        n_applied_swaps=n_applied,
        path=out_path,
        arm_counts=arm_counts,
    )


def filter_interface(stream: Iterable, interface_id: str | None) -> Iterator:
    """Pass through sessions or batches matching an interface filter."""
    if interface_id is None:
        yield from stream
        return
    for item in stream:
        if isinstance(item, SessionBatch):
            if item.interface_id == interface_id:
                yield item
        elif item.interface == interface_id:
            yield item

"""Counterfactual ranker evaluation with inverse-propensity weighting.

Each logged contact contributes the rank weight the challenger would give
that document, divided by the propensity of the position the contact
actually happened at. Down-weighting well-exposed contacts and
up-weighting poorly-exposed ones removes the logging policy's position
bias, so the estimate converges to the challenger's full-exposure value.
The sign convention differs by weight: ARP is a loss (lower is better),
DCG a gain. Results carry their direction rather than forcing one.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Iterable

import numpy as np

from rankprop.core import PropensityTable, SearchSession
from rankprop.errors import CoverageError, InsufficientDataError
from rankprop.sim import SessionBatch


class LambdaKind(Enum):
    ARP = "arp"
    DCG = "dcg"

    def weight(self, rank):
        if self is LambdaKind.ARP:
            return np.asarray(rank, dtype=np.float64)
        return 1.0 / np.log2(np.asarray(rank, dtype=np.float64) + 1.0)

    @property
    def direction(self) -> str:
        return "lower_is_better" if self is LambdaKind.ARP else "higher_is_better"


class RankerScores:
    """Total scores over each query's documents, with deterministic ties.

    Scores may be per-query or a query-independent document table; ties are
    broken by ascending document id so ranks are reproducible.
    """

    def __init__(
        self,
        by_query: dict[tuple[str, str], float] | None = None,
        doc_scores: dict[str, float] | None = None,
    ):
        self._by_query = by_query or {}
        self._doc_scores = doc_scores or {}

    @classmethod
    def from_doc_scores(cls, doc_scores: dict[str, float]) -> "RankerScores":
        return cls(doc_scores=dict(doc_scores))

    @property
    def query_independent(self) -> bool:
        return not self._by_query

    def score(self, query: str, doc: str) -> float:
        if (query, doc) in self._by_query:
            return self._by_query[(query, doc)]
        if doc in self._doc_scores:
            return self._doc_scores[doc]
        raise CoverageError(f"no score for query {query!r}, doc {doc!r}")

    def doc_vector(self, doc_ids: list[str]) -> np.ndarray:
        missing = [d for d in doc_ids if d not in self._doc_scores]
        if missing:
            raise CoverageError(f"no score for doc {missing[0]!r}")
        return np.asarray([self._doc_scores[d] for d in doc_ids], dtype=np.float64)


@dataclass(frozen=True)
class IpsEstimate:
    value: float
    direction: str
    n_queries: int
    n_contacts: int


def _session_ranks(session: SearchSession, scores: RankerScores) -> dict[str, int]:
    docs = [s.doc for s in session.slots]
    keyed = sorted(docs, key=lambda d: (-scores.score(session.query, d), d))
    return {d: i + 1 for i, d in enumerate(keyed)}


def _batch_ranks(batch: SessionBatch, scores: RankerScores) -> np.ndarray:
    """(n, L) challenger rank of the doc displayed in each slot."""
    doc_scores = scores.doc_vector(batch.doc_ids)
    lexrank = np.empty(len(batch.doc_ids), dtype=np.int64)
    for r, i in enumerate(sorted(range(len(batch.doc_ids)), key=lambda i: batch.doc_ids[i])):
        lexrank[i] = r
    disp = batch.disp_docidx
    present = disp >= 0
    safe = np.clip(disp, 0, None)
    score_mat = np.where(present, doc_scores[safe], -np.inf)
    tie_mat = np.where(present, lexrank[safe], np.iinfo(np.int64).max)
    order = np.lexsort((tie_mat, -score_mat), axis=1)
    ranks = np.empty_like(order)
    cols = np.arange(disp.shape[1])[None, :]
    np.put_along_axis(ranks, order, np.broadcast_to(cols, order.shape), axis=1)
    return ranks + 1


def _theta_vector(theta: PropensityTable, max_pos: int) -> np.ndarray:
    row = np.full(max_pos, np.nan)
    for k in range(1, max_pos + 1):
        if theta.covers(k):
            row[k - 1] = theta.theta[k]
    return row


def ips_loss(
    log: Iterable,
    scores: RankerScores,
    theta: PropensityTable,
    lam: LambdaKind,
    clip_floor: float | None = None,
) -> IpsEstimate:
    """Propensity-weighted challenger value over a logged corpus.

    Every contacted slot must have a covered propensity and every displayed
    document a score. clip_floor, when set, bounds 1/theta from above as a
    variance control; it is off by default.
    """
    total = 0.0
    n_queries = 0
    n_contacts = 0
    for item in log:
        if isinstance(item, SessionBatch):
            n_queries += len(item)
            if not item.contacted.any():
                continue
            ranks = _batch_ranks(item, scores)
            theta_row = _theta_vector(theta, item.max_length)
            con = item.contacted
            bad = con & np.isnan(theta_row)[None, :]
            if bad.any():
                pos = int(np.nonzero(bad.any(axis=0))[0][0]) + 1
                raise CoverageError(f"propensity table does not cover contacted position {pos}")
            weights = theta_row.copy()
            if clip_floor is not None:
                weights = np.maximum(weights, clip_floor)
            lam_vals = lam.weight(ranks)
            total += float((lam_vals[con] / weights[np.nonzero(con)[1]]).sum())
            n_contacts += int(con.sum())
        else:
            n_queries += 1
            contacts = [s for s in item.slots if s.contacted]
            if not contacts:
                continue
            ranks = _session_ranks(item, scores)
            for s in contacts:
                if not theta.covers(s.displayed_position):
                    raise CoverageError(
                        f"propensity table does not cover contacted position {s.displayed_position}"
                    )
                t = theta.theta[s.displayed_position]
                if clip_floor is not None:
                    t = max(t, clip_floor)
                total += lam.weight(ranks[s.doc]) / t
                n_contacts += 1
    if n_queries == 0:
        raise InsufficientDataError("ips_loss needs a non-empty log")
    if n_contacts == 0:
        warnings.warn("no contacts in log; ips estimate is 0", stacklevel=2)
    return IpsEstimate(
        value=total / n_queries,
        direction=lam.direction,
        n_queries=n_queries,
        n_contacts=n_contacts,
    )


def on_policy_metric(log: Iterable, lam: LambdaKind) -> IpsEstimate:
    """Unweighted rank-weight aggregation at the positions contacts occurred.

    Serves as the deployment-side target when the measured ranker actually
    produced the log.
    """
    total = 0.0
    n_queries = 0
    n_contacts = 0
    for item in log:
        if isinstance(item, SessionBatch):
            n_queries += len(item)
            con = item.contacted
            if not con.any():
                continue
            positions = np.nonzero(con)[1] + 1
            total += float(lam.weight(positions).sum())
            n_contacts += int(con.sum())
        else:
            n_queries += 1
            for s in item.slots:
                if s.contacted:
                    total += float(lam.weight(s.displayed_position))
                    n_contacts += 1
    if n_queries == 0:
        raise InsufficientDataError("on_policy_metric needs a non-empty log")
    return IpsEstimate(
        value=total / n_queries,
        direction=lam.direction,
        n_queries=n_queries,
        n_contacts=n_contacts,
    )


@dataclass(frozen=True)
class ComparisonResult:
    estimate_a: IpsEstimate
    estimate_b: IpsEstimate
    p_value: float


def _per_query_terms(
    log: Iterable, scores_a: RankerScores, scores_b: RankerScores, theta: PropensityTable, lam: LambdaKind
) -> tuple[np.ndarray, np.ndarray]:
    terms_a: list[np.ndarray] = []
    terms_b: list[np.ndarray] = []
    for item in log:
        if isinstance(item, SessionBatch):
            theta_row = _theta_vector(theta, item.max_length)
            con = item.contacted
            bad = con & np.isnan(theta_row)[None, :]
            if bad.any():
                pos = int(np.nonzero(bad.any(axis=0))[0][0]) + 1
                raise CoverageError(f"propensity table does not cover contacted position {pos}")
            inv = np.where(np.isnan(theta_row), 1.0, 1.0 / theta_row)
            for sc, out in ((scores_a, terms_a), (scores_b, terms_b)):
                ranks = _batch_ranks(item, sc)
                contrib = np.where(con, lam.weight(ranks) * inv[None, :], 0.0)
                out.append(contrib.sum(axis=1))
        else:
            row_a = row_b = 0.0
            contacts = [s for s in item.slots if s.contacted]
            if contacts:
                ranks_a = _session_ranks(item, scores_a)
                ranks_b = _session_ranks(item, scores_b)
                for s in contacts:
                    if not theta.covers(s.displayed_position):
                        raise CoverageError(
                            f"propensity table does not cover contacted position {s.displayed_position}"
                        )
                    inv_t = 1.0 / theta.theta[s.displayed_position]
                    row_a += lam.weight(ranks_a[s.doc]) * inv_t
                    row_b += lam.weight(ranks_b[s.doc]) * inv_t
            terms_a.append(np.asarray([row_a]))
            terms_b.append(np.asarray([row_b]))
    if not terms_a:
        raise InsufficientDataError("compare_rankers needs a non-empty log")
    return np.concatenate(terms_a), np.concatenate(terms_b)


def compare_rankers(
    log: Iterable,
    scores_a: RankerScores,
    scores_b: RankerScores,
    theta: PropensityTable,
    lam: LambdaKind,
    replications: int = 1000,
    seed: int = 0,
) -> ComparisonResult:
    """Paired bootstrap over queries comparing two challengers on one log."""
    if replications < 100:
        raise ValueError(f"replications must be >= 100, got {replications}")
    t_a, t_b = _per_query_terms(log, scores_a, scores_b, theta, lam)
    n = len(t_a)
    est_a = IpsEstimate(float(t_a.mean()), lam.direction, n, 0)
    est_b = IpsEstimate(float(t_b.mean()), lam.direction, n, 0)
    diff = t_a - t_b
    rng = np.random.default_rng(seed)
    deltas = np.empty(replications)
    for r in range(replications):
        deltas[r] = float(diff[rng.integers(0, n, size=n)].mean())
    frac_le = float(np.mean(deltas <= 0.0))
    frac_ge = float(np.mean(deltas >= 0.0))
    p = min(1.0, 2.0 * min(frac_le, frac_ge))
    return ComparisonResult(estimate_a=est_a, estimate_b=est_b, p_value=p)


def scores_from_csv_rows(rows: Iterable[tuple[str, str, float]]) -> RankerScores:
    """Scores from (query_id, doc_id, score) rows; query_id "*" is a default."""
    by_query: dict[tuple[str, str], float] = {}
    doc_scores: dict[str, float] = {}
    for query, doc, score in rows:
        if query == "*":
            doc_scores[doc] = float(score)
        else:
            by_query[(query, doc)] = float(score)
    return RankerScores(by_query=by_query, doc_scores=doc_scores)

"""Historical contact-rate features, raw and propensity-adjusted (COEC).

The raw rate contacts/impressions is confounded by where a professional
was shown. COEC divides total contacts by the propensity mass of the
positions shown instead, so a contact earned at a weak slot counts for
more and the expected feature value equals position-invariant relevance.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from rankprop.core import ProfessionalHistory, PropensityTable
from rankprop.errors import CoverageError
from rankprop.sim import SessionBatch


@dataclass(frozen=True)
class FeatureRow:
    doc: str
    raw_rate: float
    coec: float
    n_impressions: int
    sum_theta: float


def raw_rate(history: ProfessionalHistory) -> float:
    if not history.events:
        raise ValueError(f"doc {history.doc!r} has an empty history")
    return sum(1 for _, c in history.events if c) / len(history.events)


def coec(history: ProfessionalHistory, theta: PropensityTable) -> float:
    """Contacts divided by the summed propensity of the positions shown."""
    if not history.events:
        raise ValueError(f"doc {history.doc!r} has an empty history")
    mass = 0.0
    contacts = 0
    for pos, contacted in history.events:
        if not theta.covers(pos):
            raise CoverageError(f"propensity table does not cover position {pos}")
        mass += theta.theta[pos]
        contacts += int(contacted)
    if mass <= 0.0:
        raise CoverageError(f"doc {history.doc!r} has zero propensity mass")
    return contacts / mass


def build_features(log: Iterable, theta: PropensityTable) -> list[FeatureRow]:
    """One row per document appearing in the log, at displayed positions."""
    impressions: dict[str, int] = {}
    contacts: dict[str, int] = {}
    mass: dict[str, float] = {}
    max_checked = 0

    def _check_cover(position: int) -> float:
        if not theta.covers(position):
            raise CoverageError(f"propensity table does not cover position {position}")
        return theta.theta[position]

    for item in log:
        if isinstance(item, SessionBatch):
            L = item.max_length
            if L > max_checked:
                theta_row = np.asarray([_check_cover(k) for k in range(1, L + 1)])
                max_checked = L
            flat_docs = item.disp_docidx.ravel()
            present = flat_docs >= 0
            docs = flat_docs[present]
            cols = np.tile(np.arange(L), len(item))[present]
            n_docs = len(item.doc_ids)
            imp_counts = np.bincount(docs, minlength=n_docs)
            con_counts = np.bincount(docs, weights=item.contacted.ravel()[present], minlength=n_docs)
            mass_counts = np.bincount(docs, weights=theta_row[cols], minlength=n_docs)
            for di in np.nonzero(imp_counts)[0]:
                doc = item.doc_ids[di]
                impressions[doc] = impressions.get(doc, 0) + int(imp_counts[di])
                contacts[doc] = contacts.get(doc, 0) + int(con_counts[di])
                mass[doc] = mass.get(doc, 0.0) + float(mass_counts[di])
        else:
            for s in item.slots:
                t = _check_cover(s.displayed_position)
                impressions[s.doc] = impressions.get(s.doc, 0) + 1
                contacts[s.doc] = contacts.get(s.doc, 0) + int(s.contacted)
                mass[s.doc] = mass.get(s.doc, 0.0) + t

    rows = []
    for doc in sorted(impressions):
        n = impressions[doc]
        c = contacts[doc]
        m = mass[doc]
        if m <= 0.0:
            raise CoverageError(f"doc {doc!r} accumulated zero propensity mass")
        rows.append(FeatureRow(doc=doc, raw_rate=c / n, coec=c / m, n_impressions=n, sum_theta=m))
    return rows


def write_features_csv(rows: list[FeatureRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["doc_id", "n", "raw_rate", "coec", "sum_theta"])
        for r in rows:
            writer.writerow([r.doc, r.n_impressions, f"{r.raw_rate:.10g}", f"{r.coec:.10g}", f"{r.sum_theta:.10g}"])

import numpy as np
import pytest

from rankprop.coec import build_features, coec, raw_rate, write_features_csv
from rankprop.core import ProfessionalHistory, PropensityTable
from rankprop.errors import CoverageError
from rankprop.randpair import AllocationPlan
from rankprop.sim import BehaviorConfig, Catalog, RankerStub, SimConfig, simulate_batches

from conftest import make_session

NO_RANDOMIZATION = AllocationPlan(holdout_fraction=1.0, swap_pairs=(), salt="coec")


def history(events):
    return ProfessionalHistory(doc="p1", events=tuple(events))


def test_raw_rate_examples():
    assert raw_rate(history([(1, True), (2, False), (3, False)])) == pytest.approx(1 / 3)
    assert raw_rate(history([(k, False) for k in range(1, 11)])) == 0.0
    assert raw_rate(history([(1, True)] * 100)) == 1.0


def test_raw_rate_rejects_empty():
    with pytest.raises(ValueError, match="empty"):
        raw_rate(history([]))


def test_contact_at_weak_slot_earns_proportional_credit():
    theta = {k: 1.0 for k in range(1, 15)}
    theta[15] = 0.1
    table = PropensityTable.from_theta("search", theta)
    deep = coec(history([(15, True)]), table)
    top = coec(history([(1, True)]), table)
    assert deep == pytest.approx(10.0)
    assert deep == pytest.approx(10.0 * top)


def test_coec_equals_raw_rate_at_reference_position():
    table = PropensityTable.from_theta("search", {1: 1.0, 2: 0.5})
    events = [(1, True), (1, False), (1, False)]
    assert coec(history(events), table) == pytest.approx(raw_rate(history(events)))


def test_uniform_table_degenerates_to_raw_rate():
    table = PropensityTable.from_theta("search", {k: 1.0 for k in range(1, 8)})
    events = [(3, True), (5, False), (7, True), (2, False)]
    assert coec(history(events), table) == pytest.approx(raw_rate(history(events)))


def test_coec_requires_covered_positions():
    table = PropensityTable.from_theta("search", {1: 1.0, 2: 0.5})
    with pytest.raises(CoverageError, match="position 9"):
        coec(history([(9, True)]), table)


def test_build_features_single_session():
    table = PropensityTable.from_theta("search", {1: 1.0, 2: 0.5, 3: 0.25})
    rows = build_features([make_session(n=3, contacted={2: 1})], table)
    assert [r.doc for r in rows] == ["doc01", "doc02", "doc03"]
    by_doc = {r.doc: r for r in rows}
    assert by_doc["doc02"].raw_rate == 1.0
    assert by_doc["doc02"].coec == pytest.approx(2.0)
    assert by_doc["doc01"].coec == 0.0


def test_docs_without_impressions_are_absent():
    table = PropensityTable.from_theta("search", {k: 1.0 for k in range(1, 4)})
    rows = build_features([make_session(n=2)], table)
    assert {r.doc for r in rows} == {"doc01", "doc02"}


def position_confounded_corpus(theta_map, n_sessions, seed, noise=0.0):
    # Each doc is pinned to one position but relevance is shuffled, so raw
    # rates confound position with quality.
    rng = np.random.default_rng(123)
    rel = rng.permutation(np.linspace(0.85, 0.1, 15))
    catalog = Catalog(tuple((f"p{i:02d}", float(rel[i])) for i in range(15)))
    return (
        SimConfig(
            interface_id="search",
            catalog=catalog,
            behavior=BehaviorConfig(kind="pbm", theta=theta_map),
            ranker=RankerStub(kind="fixed_permutation", order=tuple(f"p{i:02d}" for i in range(15))),
            plan=NO_RANDOMIZATION,
            n_sessions=n_sessions,
            seed=seed,
        ),
        {f"p{i:02d}": float(rel[i]) for i in range(15)},
    )


def test_coec_debiases_under_known_theta():
    theta_map = {k: max(0.08, 1.0 - 0.09 * (k - 1)) for k in range(1, 16)}
    cfg, rel = position_confounded_corpus(theta_map, n_sessions=100_000, seed=41)
    table = PropensityTable.from_theta("search", theta_map)
    rows = build_features(simulate_batches(cfg), table)
    for row in rows:
        assert row.n_impressions == 100_000
        assert row.coec == pytest.approx(rel[row.doc], rel=0.03)


def test_equal_relevance_docs_disagree_on_raw_but_agree_on_coec():
    theta_map = {k: 1.0 for k in range(1, 16)}
    theta_map[15] = 0.2
    catalog = Catalog(tuple((f"p{i:02d}", 0.5) for i in range(15)))
    cfg = SimConfig(
        interface_id="search",
        catalog=catalog,
        behavior=BehaviorConfig(kind="pbm", theta=theta_map),
        ranker=RankerStub(kind="fixed_permutation", order=tuple(f"p{i:02d}" for i in range(15))),
        plan=NO_RANDOMIZATION,
        n_sessions=120_000,
        seed=42,
    )
    table = PropensityTable.from_theta("search", theta_map)
    rows = {r.doc: r for r in build_features(simulate_batches(cfg), table)}
    top, deep = rows["p00"], rows["p14"]
    assert top.raw_rate / deep.raw_rate == pytest.approx(1.0 / 0.2, rel=0.05)
    assert top.coec == pytest.approx(deep.coec, rel=0.05)


def test_overstated_curve_overcredits_deep_slots():
    # A steeper-than-true curve inflates the adjusted rate of docs shown
    # at weak positions above their true relevance.
    theta_map = {k: max(0.08, 1.0 - 0.09 * (k - 1)) for k in range(1, 16)}
    cfg, rel = position_confounded_corpus(theta_map, n_sessions=60_000, seed=43)
    overstated = {k: v**2 for k, v in theta_map.items()}
    table = PropensityTable.from_theta("search", overstated)
    rows = {r.doc: r for r in build_features(simulate_batches(cfg), table)}
    for i in range(10, 15):
        doc = f"p{i:02d}"
        assert rows[doc].coec > rel[doc]


def test_features_csv_round_trip(tmp_path):
    table = PropensityTable.from_theta("search", {1: 1.0, 2: 0.5})
    rows = build_features([make_session(n=2, contacted={1: 1})], table)
    path = tmp_path / "features.csv"
    write_features_csv(rows, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "doc_id,n,raw_rate,coec,sum_theta"
    assert len(lines) == 3

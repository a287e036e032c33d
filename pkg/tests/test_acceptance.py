"""Acceptance suite: one test per release criterion, each printing a
PASS line (run with -s or -rA to see them). Everything is checked against
simulator ground truth at fixed seeds."""

import json
import math
import time

import numpy as np
import pytest
from click.testing import CliRunner
from scipy.stats import chisquare, kendalltau

from rankprop.cli import main as cli_main
from rankprop.coec import build_features
from rankprop.core import PropensityTable
from rankprop.estimator import (
    aggregate_bases,
    bootstrap_pair_estimate,
    chain_theta,
    estimate_pair_ratio,
)
from rankprop.ips import LambdaKind, RankerScores, ips_loss, on_policy_metric
from rankprop.power import PowerSpec, hypothesized_effect, monte_carlo_power, required_sample
from rankprop.randpair import AllocationPlan, assign_arms_batch
from rankprop.sim import BehaviorConfig, Catalog, RankerStub, SimConfig, simulate_batches

NO_RANDOMIZATION = AllocationPlan(holdout_fraction=1.0, swap_pairs=(), salt="acceptance")


def truth_theta_19() -> dict[int, float]:
    """Ground-truth curve with the position-10 bump and a flat tail."""
    theta = {
        1: 1.00, 2: 0.60, 3: 0.45, 4: 0.38, 5: 0.33, 6: 0.30,
        7: 0.28, 8: 0.27, 9: 0.26, 10: 0.28, 11: 0.25, 19: 0.22,
    }
    for k in range(12, 19):
        frac = (k - 11) / 8
        theta[k] = math.exp(math.log(0.25) + frac * (math.log(0.22) - math.log(0.25)))
    return theta


def graded_catalog(n, top, bottom):
    rel = np.linspace(top, bottom, n)
    return Catalog(tuple((f"d{i:02d}", float(rel[i])) for i in range(n)))


def default_plan_corpus(catalog, theta, n_sessions, seed, salt):
    return SimConfig(
        interface_id="search",
        catalog=catalog,
        behavior=BehaviorConfig(kind="pbm", theta=theta),
        ranker=RankerStub(kind="by_relevance"),
        plan=AllocationPlan.default(salt),
        n_sessions=n_sessions,
        seed=seed,
    )


def test_theta_recovery_within_five_percent():
    theta = truth_theta_19()
    cfg = default_plan_corpus(
        graded_catalog(19, 0.9, 0.25), theta, n_sessions=2_000_000, seed=101, salt="acc-recovery"
    )
    pairs = list(cfg.plan.swap_pairs)
    started = time.monotonic()
    bases = aggregate_bases(simulate_batches(cfg), pairs)
    estimates = [estimate_pair_ratio(bases[p].to_counts()) for p in pairs]
    table = chain_theta(estimates, interface="search")
    elapsed = time.monotonic() - started
    worst = 0.0
    for k in range(1, 12):
        rel_err = abs(table.theta[k] - theta[k]) / theta[k]
        worst = max(worst, rel_err)
        assert rel_err <= 0.05, f"position {k}: {table.theta[k]:.4f} vs {theta[k]:.4f}"
    assert elapsed < 120.0, f"simulate+estimate took {elapsed:.1f}s"
    print(
        f"PASS: theta recovery, 2M sessions, positions 1-11 within ±5% "
        f"(worst {worst * 100:.2f}%), {elapsed:.1f}s"
    )


def test_pair_ratios_unbiased_across_relevance_profiles():
    theta = truth_theta_19()
    pairs = list(AllocationPlan.default("x").swap_pairs)
    results = {}
    for name, catalog, seed in (
        ("uniform 0.3", Catalog(tuple((f"d{i:02d}", 0.3) for i in range(19))), 202),
        ("graded 0.9->0.05", graded_catalog(19, 0.9, 0.05), 203),
    ):
        cfg = default_plan_corpus(catalog, theta, n_sessions=600_000, seed=seed, salt="acc-unbiased")
        bases = aggregate_bases(simulate_batches(cfg), pairs)
        covered = 0
        for i, (hi, lo) in enumerate(pairs):
            est = bootstrap_pair_estimate(bases[(hi, lo)], replications=1000, seed=1000 + i)
            truth = theta[hi] / theta[lo]
            if est.ci[0] <= truth <= est.ci[1]:
                covered += 1
        results[name] = covered
        assert covered >= 10, f"{name}: only {covered}/11 pair CIs cover truth"
    print(f"PASS: ratio unbiasedness across disjoint relevance profiles, coverage {results}")


def test_bootstrap_coverage_over_meta_trials():
    truth_ratio = 1.0 / 0.8
    plan = AllocationPlan(holdout_fraction=0.5, swap_pairs=((1, 2),), salt="acc-coverage")
    covered = 0
    for trial in range(100):
        cfg = SimConfig(
            interface_id="search",
            catalog=Catalog((("a", 0.35), ("b", 0.30))),
            behavior=BehaviorConfig(kind="pbm", theta={1: 1.0, 2: 0.8}),
            ranker=RankerStub(kind="by_relevance"),
            plan=plan,
            n_sessions=400_000,
            seed=300 + trial,
        )
        bases = aggregate_bases(simulate_batches(cfg), [(1, 2)])
        assert bases[(1, 2)].n_treated >= 195_000
        est = bootstrap_pair_estimate(bases[(1, 2)], replications=1000, seed=trial)
        if est.ci[0] <= truth_ratio <= est.ci[1]:
            covered += 1
    assert covered >= 93, f"CI covered truth in only {covered}/100 trials"
    print(f"PASS: bootstrap 95% CI covered the (1,2) truth in {covered}/100 meta-trials")


def test_coec_debiasing_and_miscalibration_direction():
    n_docs = 100
    theta_map = {k: float(k) ** -0.5 for k in range(1, n_docs + 1)}
    rng = np.random.default_rng(404)
    rel_values = rng.permutation(np.linspace(0.9, 0.05, n_docs))
    catalog = Catalog(tuple((f"p{i:03d}", float(rel_values[i])) for i in range(n_docs)))
    cfg = SimConfig(
        interface_id="search",
        catalog=catalog,
        behavior=BehaviorConfig(kind="pbm", theta=theta_map),
        ranker=RankerStub(kind="fixed_permutation", order=tuple(f"p{i:03d}" for i in range(n_docs))),
        plan=NO_RANDOMIZATION,
        n_sessions=10_000,
        seed=405,
    )
    batches = list(simulate_batches(cfg))
    rel_by_doc = {f"p{i:03d}": float(rel_values[i]) for i in range(n_docs)}

    true_table = PropensityTable.from_theta("search", theta_map)
    rows = {r.doc: r for r in build_features(batches, true_table)}
    docs = sorted(rows)
    rel_vec = [rel_by_doc[d] for d in docs]
    tau_coec = kendalltau(rel_vec, [rows[d].coec for d in docs]).statistic
    tau_raw = kendalltau(rel_vec, [rows[d].raw_rate for d in docs]).statistic
    assert tau_coec >= 0.95, f"coec tau {tau_coec:.3f}"
    assert tau_raw < tau_coec, f"raw tau {tau_raw:.3f} not below coec tau {tau_coec:.3f}"

    overstated = PropensityTable.from_theta("search", {k: v**2 for k, v in theta_map.items()})
    rows_over = {r.doc: r for r in build_features(batches, overstated)}
    deep_docs = [f"p{i:03d}" for i in range(79, n_docs)]
    inflated = sum(rows_over[d].coec > rel_by_doc[d] for d in deep_docs)
    assert inflated == len(deep_docs), "overstated curve failed to over-credit deep slots"
    print(
        f"PASS: coec debiasing (tau {tau_coec:.3f} vs raw {tau_raw:.3f}); "
        f"overstated curve inflates all {len(deep_docs)} deep docs"
    )


IPS_THETA = {1: 1.00, 2: 0.60, 3: 0.45, 4: 0.38, 5: 0.33, 6: 0.30,
             7: 0.28, 8: 0.27, 9: 0.26, 10: 0.28, 11: 0.25, 12: 0.24}
IPS_REL = [0.15, 0.7, 0.3, 0.85, 0.5, 0.25, 0.6, 0.1, 0.45, 0.8, 0.2, 0.35]


def ips_catalog():
    return Catalog(tuple((f"d{i:02d}", IPS_REL[i]) for i in range(12)))


def ips_corpus(behavior, ranker, seed):
    return SimConfig(
        interface_id="search",
        catalog=ips_catalog(),
        behavior=behavior,
        ranker=ranker,
        plan=NO_RANDOMIZATION,
        n_sessions=1_000_000,
        seed=seed,
    )


def test_ips_counterfactual_consistency_and_misspecification():
    logging_ranker = RankerStub(kind="fixed_permutation", order=tuple(f"d{i:02d}" for i in range(12)))
    challenger = RankerScores.from_doc_scores({f"d{i:02d}": IPS_REL[i] for i in range(12)})
    theta_table = PropensityTable.from_theta("search", IPS_THETA)

    # on-policy oracle: deploy the challenger under full examination, where
    # the unweighted contact aggregation measures exactly what the
    # propensity-weighted estimate targets
    oracle_cfg = ips_corpus(
        BehaviorConfig(kind="pbm", theta={k: 1.0 for k in range(1, 13)}),
        RankerStub(kind="by_relevance"),
        seed=501,
    )
    oracle = on_policy_metric(simulate_batches(oracle_cfg), LambdaKind.DCG).value

    pbm_cfg = ips_corpus(BehaviorConfig(kind="pbm", theta=IPS_THETA), logging_ranker, seed=502)
    ips_pbm = ips_loss(simulate_batches(pbm_cfg), challenger, theta_table, LambdaKind.DCG).value
    rel_err = abs(ips_pbm - oracle) / oracle
    assert rel_err < 0.03, f"pbm consistency violated: {ips_pbm:.4f} vs {oracle:.4f} ({rel_err:.3%})"

    trust_cfg = ips_corpus(
        BehaviorConfig(
            kind="trust_pbm",
            theta=IPS_THETA,
            eps_plus={k: 0.95 - 0.05 * (k - 1) for k in range(1, 13)},
            eps_minus={k: 0.1 for k in range(1, 13)},
        ),
        logging_ranker,
        seed=503,
    )
    ips_trust = ips_loss(simulate_batches(trust_cfg), challenger, theta_table, LambdaKind.DCG).value
    trust_err = abs(ips_trust - oracle) / oracle
    assert trust_err > 0.03, f"trust-bias logs unexpectedly consistent ({trust_err:.3%})"
    print(
        f"PASS: ips consistency under pbm ({rel_err:.2%} vs oracle) and "
        f"misspecification exposure under trust bias ({trust_err:.2%})"
    )


def test_power_closed_form_and_monte_carlo():
    spec = PowerSpec(p_hi=0.10, p_lo=0.05, alpha=0.05, power=0.80)
    n = required_sample(spec)
    assert n == 432
    mc = monte_carlo_power(theta_ratio=2.0, base_rate=0.05, n=n, alpha=0.05, sims=40_000, seed=601)
    assert 0.77 <= mc <= 0.83, f"monte-carlo power {mc:.3f}"
    assert hypothesized_effect(0.10, 0.06) == pytest.approx((0.09, 0.07), rel=1e-12)
    assert hypothesized_effect(0.08, 0.04) == pytest.approx((0.07, 0.05), rel=1e-12)
    assert hypothesized_effect(0.30, 0.10) == pytest.approx((0.25, 0.15), rel=1e-12)
    print(f"PASS: power closed form n=432, monte-carlo power {mc:.3f}, half-gap rule on 3 hand cases")


def _write_sim_config(path, behavior, n_sessions=30_000, seed=700):
    catalog = [{"doc_id": f"d{i:02d}", "relevance": round(0.55 - 0.06 * i, 4)} for i in range(6)]
    config = {
        "interface_id": "search",
        "seed": seed,
        "n_sessions": n_sessions,
        "catalog": catalog,
        "behavior": behavior,
        "ranker": {"kind": "by_relevance"},
        "plan": {"holdout_fraction": 0.5, "swap_pairs": [[1, 2], [2, 3]], "salt": "acc-report"},
    }
    path.write_text(json.dumps(config))


def test_report_separates_cascade_from_pbm(tmp_path):
    runner = CliRunner()
    reports = {}
    for name, behavior in (
        ("cascade", {"kind": "cascade"}),
        ("pbm", {"kind": "pbm", "theta": {str(k): round(0.9 - 0.1 * (k - 1), 2) for k in range(1, 7)}}),
    ):
        cfg_path = tmp_path / f"{name}.json"
        _write_sim_config(cfg_path, behavior)
        sim_out = tmp_path / f"{name}_sim"
        result = runner.invoke(cli_main, ["simulate", "--config", str(cfg_path), "--out", str(sim_out)])
        assert result.exit_code == 0, result.output
        rep_out = tmp_path / f"{name}_report"
        result = runner.invoke(
            cli_main, ["report", "--input", str(sim_out / "log.jsonl"), "--out", str(rep_out)]
        )
        assert result.exit_code == 0, result.output
        reports[name] = json.loads((rep_out / "report.json").read_text())

    cascade = reports["cascade"]
    assert cascade["multi_contact_sessions"] == 0
    assert cascade["reversal"]["rate"] == 0.0
    assert cascade["reversal"]["n_two_contact"] == 0

    pbm = reports["pbm"]
    assert pbm["multi_contact_sessions"] > 0
    assert pbm["reversal"]["rate"] > 0.0
    print(
        "PASS: report separates behavior models (cascade reversal 0.0 / multi 0; "
        f"pbm reversal {pbm['reversal']['rate']:.3f} / multi {pbm['multi_contact_sessions']})"
    )


def test_allocation_shares_and_uniformity():
    n = 1_100_000
    plan = AllocationPlan.default("acc-allocation")
    arms = assign_arms_batch([f"v{i:08d}" for i in range(n)], plan)
    holdout_share = float((arms == -1).mean())
    assert abs(holdout_share - 0.5) < 0.001, f"holdout share {holdout_share:.5f}"
    counts = np.bincount(arms[arms >= 0], minlength=11)
    nominal = 0.5 / 11
    for a in range(11):
        share = counts[a] / n
        assert abs(share - nominal) < 0.001, f"arm {a} share {share:.5f}"
    observed = [int((arms == -1).sum())] + counts.tolist()
    expected = [n * 0.5] + [n * nominal] * 11
    stat = chisquare(observed, expected)
    assert stat.pvalue > 0.001, f"uniformity rejected, p={stat.pvalue:.5f}"
    print(
        f"PASS: allocation on 1.1M visitors (holdout {holdout_share * 100:.2f}%, "
        f"arms within ±0.1pp of 4.55%, chi-square p={stat.pvalue:.3f})"
    )


def test_simulate_and_estimate_reruns_are_byte_identical(tmp_path):
    runner = CliRunner()
    cfg_path = tmp_path / "sim.json"
    _write_sim_config(
        cfg_path,
        {"kind": "pbm", "theta": {str(k): round(0.9 - 0.1 * (k - 1), 2) for k in range(1, 7)}},
        n_sessions=10_000,
        seed=801,
    )
    sim_out = tmp_path / "sim1"
    result = runner.invoke(cli_main, ["simulate", "--config", str(cfg_path), "--out", str(sim_out)])
    assert result.exit_code == 0, result.output
    sim_again = tmp_path / "sim2"
    result = runner.invoke(
        cli_main, ["rerun", "--manifest", str(sim_out / "manifest.json"), "--out", str(sim_again)]
    )
    assert result.exit_code == 0, result.output
    assert (sim_again / "log.jsonl").read_bytes() == (sim_out / "log.jsonl").read_bytes()

    est_out = tmp_path / "est1"
    result = runner.invoke(
        cli_main,
        [
            "estimate",
            "--input", str(sim_out / "log.jsonl"),
            "--pairs", "1:2,2:3",
            "--bootstrap-reps", "300",
            "--out", str(est_out),
        ],
    )
    assert result.exit_code == 0, result.output
    est_again = tmp_path / "est2"
    result = runner.invoke(
        cli_main, ["rerun", "--manifest", str(est_out / "manifest.json"), "--out", str(est_again)]
    )
    assert result.exit_code == 0, result.output
    for name in ("propensities.json", "positions.csv"):
        assert (est_again / name).read_bytes() == (est_out / name).read_bytes()
    print("PASS: simulate and estimate reruns from manifests are byte-identical")

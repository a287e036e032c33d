"""Command-line entry point wiring the toolkit end to end.

Subcommands: simulate, estimate, features, evaluate, power, report, serve,
rerun. Every output-producing run writes a manifest next to its outputs
(parameter echo, input hashes, output hashes, tool version); `rerun`
replays a manifest into a fresh directory and, because nothing downstream
of the seed or the input bytes is time- or environment-dependent,
reproduces the outputs byte for byte.

Domain failures exit 1 with a single line: ERROR <ErrorClass>: <detail>.
Set RANKPROP_LOG_LEVEL to control logging.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import click

import rankprop
from rankprop.coec import build_features, write_features_csv
from rankprop.core import (
    MergeStats,
    load_propensity_artifact,
    merge_logs,
    save_propensity_artifact,
)
from rankprop.errors import RankpropError
from rankprop.estimator import (
    contact_rate_by_position,
    program_cost,
    reversal_rate,
)
from rankprop.estimator import run_estimate as estimate_from_stream
from rankprop.ips import LambdaKind, ips_loss, scores_from_csv_rows
from rankprop.power import PairPlan, plan_pairs
from rankprop.randpair import DEFAULT_SWAP_PAIRS
from rankprop.sim import SimConfig, simulate_corpus

logger = logging.getLogger(__name__)

DEFAULT_PAIRS_SPEC = ",".join(f"{hi}:{lo}" for hi, lo in DEFAULT_SWAP_PAIRS)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, params: dict, inputs: list[Path], outputs: list[Path]) -> Path:
    manifest = {
        "tool": "rankprop",
        "version": rankprop.__version__,
        "command": command,
        "params": params,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {p.name: _sha256(p) for p in outputs},
    }
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _parse_pairs(spec: str) -> list[tuple[int, int]]:
    pairs = []
    for chunk in spec.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        hi, lo = chunk.split(":")
        pairs.append((int(hi), int(lo)))
    if not pairs:
        raise ValueError(f"no pairs in spec {spec!r}")
    return pairs


def _interface_stream(paths: list[str], interface: str | None, stats: MergeStats | None = None):
    """Validated sessions, filtered to one interface.

    Without an explicit interface the first session's interface is adopted
    and sessions from other interfaces are skipped with a warning.
    """
    adopted = interface
    skipped = 0
    for session in merge_logs(paths, stats=stats):
        if adopted is None:
            adopted = session.interface
        if session.interface != adopted:
            skipped += 1
            continue
        yield session
    if skipped:
        logger.warning("skipped %d sessions from other interfaces (using %r)", skipped, adopted)


def _resolve_interface(paths: list[str], interface: str | None) -> str:
    if interface is not None:
        return interface
    for session in merge_logs(paths):
        return session.interface
    raise RankpropError("log stream contained no sessions")


def run_simulate(params: dict, out_dir: Path) -> list[Path]:
    cfg = SimConfig.from_file(params["config"])
    if params.get("seed") is not None:
        cfg_dict = cfg.to_dict()
        cfg_dict["seed"] = int(params["seed"])
        cfg = SimConfig.from_dict(cfg_dict)
    log_path = out_dir / "log.jsonl"
    stats = simulate_corpus(cfg, log_path)
    click.echo(f"simulated {stats.n_sessions} sessions ({stats.n_applied_swaps} applied swaps) -> {log_path}")
    return [log_path]


def run_estimate(params: dict, out_dir: Path) -> list[Path]:
    pairs = _parse_pairs(params["pairs"])
    interface = _resolve_interface(params["inputs"], params.get("interface"))
    result = run_estimate_stream(params, pairs, interface)
    artifact_path = out_dir / "propensities.json"
    gap_pairs = [(hi, lo) for hi, lo in pairs if lo > hi + 1]
    meta = {
        "date_range_ms": list(result.ts_range),
        "n_per_pair": {
            f"{hi}:{lo}": {
                "treated": result.bases[(hi, lo)].n_treated,
                "holdout": result.bases[(hi, lo)].n_holdout,
            }
            for hi, lo in pairs
        },
        "plan_hash": hashlib.sha256(json.dumps(pairs).encode()).hexdigest()[:16],
        "bootstrap_replications": params["bootstrap_reps"],
        "interpolation": (
            f"log-linear inside gap pairs {gap_pairs}" if gap_pairs and params["interpolate"] else None
        ),
    }
    save_propensity_artifact(result.table, artifact_path, meta=meta)
    csv_path = out_dir / "positions.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["position", "theta", "ci_low", "ci_high", "n"])
        for pos in result.table.positions():
            writer.writerow(
                [
                    pos,
                    f"{result.table.theta[pos]:.10g}",
                    f"{result.table.ci_low[pos]:.10g}",
                    f"{result.table.ci_high[pos]:.10g}",
                    result.n_by_position.get(pos, 0),
                ]
            )
    click.echo(f"estimated {len(result.table.theta)} positions for interface {interface!r} -> {artifact_path}")
    return [artifact_path, csv_path]


def run_estimate_stream(params: dict, pairs: list[tuple[int, int]], interface: str):
    stream = _interface_stream(params["inputs"], interface)
    return estimate_from_stream(
        stream,
        pairs,
        interface=interface,
        replications=params["bootstrap_reps"],
        seed=params["seed"],
        interpolate_gap=params["interpolate"],
    )


def run_features(params: dict, out_dir: Path) -> list[Path]:
    table, _ = load_propensity_artifact(params["propensities"])
    rows = build_features(_interface_stream(params["inputs"], params.get("interface")), table)
    out_path = out_dir / "features.csv"
    write_features_csv(rows, out_path)
    click.echo(f"wrote {len(rows)} feature rows -> {out_path}")
    return [out_path]


def run_evaluate(params: dict, out_dir: Path) -> list[Path]:
    table, _ = load_propensity_artifact(params["propensities"])
    with open(params["scores"], "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        scores = scores_from_csv_rows(
            (row["query_id"], row["doc_id"], float(row["score"])) for row in reader
        )
    lam = LambdaKind(params["lam"])
    estimate = ips_loss(
        _interface_stream(params["inputs"], params.get("interface")),
        scores,
        table,
        lam,
        clip_floor=params.get("clip_floor"),
    )
    out_path = out_dir / "metrics.json"
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "lambda": lam.value,
                "direction": estimate.direction,
                "ips_value": estimate.value,
                "n_queries": estimate.n_queries,
                "n_contacts": estimate.n_contacts,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    click.echo(f"ips {lam.value} = {estimate.value:.6g} ({estimate.direction}) -> {out_path}")
    return [out_path]


def run_power(params: dict, out_dir: Path) -> list[Path]:
    rates: dict[int, float] = {}
    with open(params["rates"], "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rates[int(row["position"])] = float(row["contact_rate"])
    if len(rates) < 2:
        raise RankpropError("rates CSV needs at least two positions")
    daily = params.get("daily_sessions")
    daily_per_arm = None
    if daily:
        n_arms = len(rates) - 1
        daily_per_arm = daily * (1.0 - params["holdout_fraction"]) / n_arms
    plans = plan_pairs(
        rates,
        alpha=params["alpha"],
        power=params["power"],
        daily_treated_per_arm=daily_per_arm,
    )
    out_path = out_dir / "plan.csv"
    _write_plan_csv(plans, out_path)
    click.echo(f"wrote plan for {len(plans)} pairs -> {out_path}")
    return [out_path]


def _write_plan_csv(plans: list[PairPlan], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["hi", "lo", "p_hi", "p_lo", "n_per_cell", "days_to_significance", "note"])
        for p in plans:
            writer.writerow(
                [
                    p.hi,
                    p.lo,
                    f"{p.p_hi:.10g}",
                    f"{p.p_lo:.10g}",
                    p.n_per_cell if p.n_per_cell is not None else "",
                    f"{p.days:.2f}" if p.days is not None else "",
                    p.note,
                ]
            )


def run_report(params: dict, out_dir: Path) -> list[Path]:
    paths = params["inputs"]
    interface = params.get("interface")

    n_sessions = 0
    n_contacts = 0
    multi_contact = 0
    for session in _interface_stream(paths, interface):
        n_sessions += 1
        c = session.n_contacts
        n_contacts += c
        if c >= 2:
            multi_contact += 1
    if n_sessions == 0:
        raise RankpropError("log stream contained no sessions")

    reversal = reversal_rate(_interface_stream(paths, interface))
    try:
        cost = program_cost(_interface_stream(paths, interface))
        cost_payload = {
            name: {
                "metric": r.metric,
                "relative_delta": r.relative_delta,
                "p_value": r.p_value,
                "rate_treated": r.rate_treated,
                "rate_holdout": r.rate_holdout,
                "n_treated": r.n_treated,
                "n_holdout": r.n_holdout,
            }
            for name, r in cost.items()
        }
    except RankpropError as exc:
        cost_payload = {"unavailable": str(exc)}

    rate_rows = contact_rate_by_position(_interface_stream(paths, interface))
    csv_path = out_dir / "contact_rate_by_position.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["position", "impressions", "contacts", "contact_rate"])
        for pos, imps, cons in rate_rows:
            writer.writerow([pos, imps, cons, f"{cons / imps:.10g}"])

    report = {
        "n_sessions": n_sessions,
        "n_contacts": n_contacts,
        "multi_contact_sessions": multi_contact,
        "reversal": {
            "rate": reversal.rate,
            "lower_first": reversal.lower_first,
            "n_two_contact": reversal.n_two_contact,
            "present": reversal.present,
        },
        "program_cost": cost_payload,
    }
    report_path = out_dir / "report.json"
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    click.echo(f"report over {n_sessions} sessions -> {report_path}")
    return [report_path, csv_path]


_RUNNERS = {
    "simulate": (run_simulate, lambda p: [Path(p["config"])]),
    "estimate": (run_estimate, lambda p: [Path(x) for x in p["inputs"]]),
    "features": (run_features, lambda p: [Path(x) for x in p["inputs"]] + [Path(p["propensities"])]),
    "evaluate": (
        run_evaluate,
        lambda p: [Path(x) for x in p["inputs"]] + [Path(p["propensities"]), Path(p["scores"])],
    ),
    "power": (run_power, lambda p: [Path(p["rates"])]),
    "report": (run_report, lambda p: [Path(x) for x in p["inputs"]]),
}


def _execute(command: str, params: dict, out: str) -> None:
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    runner, input_fn = _RUNNERS[command]
    outputs = runner(params, out_dir)
    _write_manifest(out_dir, command, params, input_fn(params), outputs)


def _fail(exc: Exception) -> None:
    click.echo(f"ERROR {type(exc).__name__}: {exc}", err=True)
    sys.exit(1)


def _guarded(command: str, params: dict, out: str) -> None:
    try:
        _execute(command, params, out)
    except (RankpropError, ValueError, OSError) as exc:
        _fail(exc)


@click.group()
def main() -> None:
    """Position-bias measurement from swap-randomized search logs."""
    level = os.environ.get("RANKPROP_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


@main.command()
@click.option("--config", required=True, type=click.Path(exists=True), help="Simulation config JSON.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", required=True, type=click.Path(), help="Output directory.")
def simulate(config: str, seed: int | None, out: str) -> None:
    """Generate a synthetic corpus and write it as a session log."""
    _guarded("simulate", {"config": str(Path(config).resolve()), "seed": seed}, out)


@main.command()
@click.option("--input", "inputs", required=True, multiple=True, type=click.Path(exists=True))
@click.option("--interface", default=None, help="Interface to estimate; default: first seen.")
@click.option("--pairs", default=DEFAULT_PAIRS_SPEC, show_default=True, help="Swap pairs as hi:lo,...")
@click.option("--bootstrap-reps", default=1000, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int, help="Bootstrap seed.")
@click.option("--interpolate/--no-interpolate", default=True, show_default=True)
@click.option("--out", required=True, type=click.Path())
def estimate(inputs, interface, pairs, bootstrap_reps, seed, interpolate, out) -> None:
    """Estimate a propensity table from randomized logs."""
    _guarded(
        "estimate",
        {
            "inputs": [str(Path(p).resolve()) for p in inputs],
            "interface": interface,
            "pairs": pairs,
            "bootstrap_reps": bootstrap_reps,
            "seed": seed,
            "interpolate": interpolate,
        },
        out,
    )


@main.command()
@click.option("--input", "inputs", required=True, multiple=True, type=click.Path(exists=True))
@click.option("--propensities", required=True, type=click.Path(exists=True))
@click.option("--interface", default=None)
@click.option("--out", required=True, type=click.Path())
def features(inputs, propensities, interface, out) -> None:
    """Export raw and propensity-adjusted historical rate features."""
    _guarded(
        "features",
        {
            "inputs": [str(Path(p).resolve()) for p in inputs],
            "propensities": str(Path(propensities).resolve()),
            "interface": interface,
        },
        out,
    )


@main.command()
@click.option("--input", "inputs", required=True, multiple=True, type=click.Path(exists=True))
@click.option("--scores", required=True, type=click.Path(exists=True), help="CSV: query_id,doc_id,score.")
@click.option("--propensities", required=True, type=click.Path(exists=True))
@click.option("--lambda", "lam", type=click.Choice(["arp", "dcg"]), default="dcg", show_default=True)
@click.option("--clip-floor", type=float, default=None, help="Optional propensity floor.")
@click.option("--interface", default=None)
@click.option("--out", required=True, type=click.Path())
def evaluate(inputs, scores, propensities, lam, clip_floor, interface, out) -> None:
    """Counterfactually evaluate a scores table against a logged corpus."""
    _guarded(
        "evaluate",
        {
            "inputs": [str(Path(p).resolve()) for p in inputs],
            "scores": str(Path(scores).resolve()),
            "propensities": str(Path(propensities).resolve()),
            "lam": lam,
            "clip_floor": clip_floor,
            "interface": interface,
        },
        out,
    )


@main.command()
@click.option("--rates", required=True, type=click.Path(exists=True), help="CSV: position,contact_rate.")
@click.option("--alpha", default=0.05, show_default=True, type=float)
@click.option("--power", "power_", default=0.80, show_default=True, type=float)
@click.option("--daily-sessions", default=None, type=float, help="Total eligible sessions per day.")
@click.option("--holdout-fraction", default=0.5, show_default=True, type=float)
@click.option("--out", required=True, type=click.Path())
def power(rates, alpha, power_, daily_sessions, holdout_fraction, out) -> None:
    """Per-pair sample-size plan from observed contact rates."""
    _guarded(
        "power",
        {
            "rates": str(Path(rates).resolve()),
            "alpha": alpha,
            "power": power_,
            "daily_sessions": daily_sessions,
            "holdout_fraction": holdout_fraction,
        },
        out,
    )


@main.command()
@click.option("--input", "inputs", required=True, multiple=True, type=click.Path(exists=True))
@click.option("--interface", default=None)
@click.option("--out", required=True, type=click.Path())
def report(inputs, interface, out) -> None:
    """Diagnostics: contact rates by position, reversal rate, program cost."""
    _guarded(
        "report",
        {"inputs": [str(Path(p).resolve()) for p in inputs], "interface": interface},
        out,
    )


@main.command()
@click.option("--tables", required=True, type=click.Path(exists=True), help="Directory of propensity artifacts.")
@click.option("--port", default=8787, show_default=True, type=int)
@click.option("--cors-origin", "cors_origins", multiple=True, help="Allowed CORS origin (default: *).")
def serve(tables, port, cors_origins) -> None:
    """Start the scenario forecast service."""
    from rankprop.service import serve as serve_impl

    try:
        serve_impl(tables, port=port, cors_origins=list(cors_origins) or None)
    except (RankpropError, ValueError, OSError) as exc:
        _fail(exc)


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def rerun(manifest, out) -> None:
    """Replay a recorded run into a fresh directory, byte for byte."""
    try:
        with open(manifest, "r", encoding="utf-8") as fh:
            recorded = json.load(fh)
        command = recorded["command"]
        if command not in _RUNNERS:
            raise RankpropError(f"manifest command {command!r} is not replayable")
        for path_str, digest in recorded["inputs"].items():
            current = _sha256(Path(path_str))
            if current != digest:
                raise RankpropError(f"input {path_str} changed since the recorded run")
        _execute(command, recorded["params"], out)
    except (RankpropError, ValueError, OSError, KeyError) as exc:
        _fail(exc)


if __name__ == "__main__":
    main()

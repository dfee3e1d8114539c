"""``crowdrisk`` command line.

Exit codes: 0 success, 1 invalid configuration, 2 runtime failure, 3 a
collision happened while an experiment re-drove its chosen traversals.
Progress and diagnostics go to stderr; stdout carries only short
summaries, so either stream can be piped.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config_io import (
    REFERENCE_MANIFEST,
    ConfigError,
    Manifest,
    ReportSet,
    data_path,
    emit_reports,
    load_manifest,
    read_risk_table,
    run_metadata,
)
from .controller import POLICIES, make_policy
from .experiments import ExperimentSpec, loocv, spike_report
from .risk_engine import RiskJob, build_risk_table
from .world_sim import Traversal, run_traversal

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_COLLISION = 0, 1, 2, 3
EXPERIMENTS = {"which-path": "which_path", "which-day": "which_day", "which-time": "which_time"}


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--manifest",
        type=Path,
        default=None,
        help="study manifest (JSON); defaults to the shipped reference manifest",
    )
    common.add_argument("--seed", type=_u64, default=None, help="base seed; run k uses seed + k (default: manifest seed)")
    common.add_argument("--runs", type=_positive, default=None, help="Monte Carlo runs per traversal (default: manifest runs)")
    common.add_argument("--policy", choices=sorted(POLICIES), default=None, help="controller (default: manifest policy)")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: ./out)")
    common.add_argument("--jobs", type=_positive, default=1, help="worker processes; results do not depend on it")

    table = argparse.ArgumentParser(add_help=False)
    table.add_argument("--table", type=Path, default=None, help="reuse a risk_table.csv instead of simulating")

    parser = argparse.ArgumentParser(prog="crowdrisk", description="Dollar-valued crowd risk for route, day and time choice.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    sub.add_parser("validate", parents=[common], help="check manifest, scenario and network")
    sim = sub.add_parser("simulate", parents=[common], help="drive one traversal and write its trace")
    sim.add_argument("--traversal", required=True, help="PATH/DAY/HH:MM, e.g. B/Monday/17:00")
    sub.add_parser("risk", parents=[common], help="estimate the full risk table")
    exp = sub.add_parser("experiment", parents=[common, table], help="leave-one-out decision experiment")
    exp.add_argument("kind", choices=sorted(EXPERIMENTS))
    spk = sub.add_parser("spikes", parents=[common, table], help="list traversals well above their path's mean")
    spk.add_argument("--factor", type=float, default=2.0, help="threshold as a multiple of the path mean (default 2)")
    return parser


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _manifest(args) -> Manifest:
    m = load_manifest(args.manifest or data_path(REFERENCE_MANIFEST))
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.runs is not None:
        changes["runs"] = args.runs
    if args.policy is not None:
        changes["policy"] = args.policy
    return replace(m, **changes) if changes else m


def _job(m: Manifest) -> RiskJob:
    return RiskJob(m.scenario, m.network, m.policy, m.loss, m.sim, m.vehicle)


def _progress(label):
    def report(done, total):
        if done == total or done % 10 == 0:
            _log(f"{label}: {done}/{total} traversals")

    return report


def _table(args, m: Manifest):
    if getattr(args, "table", None) is not None:
        return read_risk_table(args.table)
    return build_risk_table(_job(m), m.runs, m.seed, args.jobs, _progress("risk"))


def _metadata(m: Manifest, command: str, **extra) -> dict:
    return run_metadata(m, command=command, base_seed=m.seed, runs=m.runs, seed_rule="run k uses base_seed + k", **extra)


def cmd_validate(args, m: Manifest) -> int:
    n = len(m.scenario.traversals())
    print(f"ok: {len(m.scenario.locations)} locations, {len(m.scenario.paths)} paths, {n} traversals")
    return EXIT_OK


def cmd_simulate(args, m: Manifest) -> int:
    tr = Traversal.parse(args.traversal)
    scn = m.scenario
    if tr.path not in scn.paths or tr.day not in scn.days or tr.time not in scn.times:
        _log(f"error: unknown traversal {args.traversal!r}")
        return EXIT_INVALID
    trace = run_traversal(scn, tr, make_policy(m.policy, m.vehicle), m.seed, m.sim, m.vehicle)
    emit_reports(ReportSet(traces=[trace], metadata=_metadata(m, "simulate", traversal=tr.id)), args.out)
    print(f"{tr.id}: {trace.n_steps} s, {trace.collisions} collisions")
    return EXIT_OK


def cmd_risk(args, m: Manifest) -> int:
    table = _table(args, m)
    if not table.normalized:
        _log("warning: some path has zero total risk; normalized values omitted")
    emit_reports(ReportSet(table=table, metadata=_metadata(m, "risk")), args.out)
    print(f"wrote {len(table.cells)} traversals to {args.out}")
    return EXIT_OK


def cmd_experiment(args, m: Manifest) -> int:
    kind = EXPERIMENTS[args.kind]
    table = _table(args, m)
    policy = make_policy(m.policy, m.vehicle)

    def navigate(tr, seed):
        return run_traversal(m.scenario, tr, policy, seed, m.sim, m.vehicle)

    report = loocv(table, ExperimentSpec(kind, m.runs, m.seed, navigate))
    emit_reports(ReportSet(table=table, experiments=[report], metadata=_metadata(m, f"experiment {args.kind}")), args.out)
    print(f"{kind}: accuracy {report.accuracy:.4f} over {report.n_folds} folds, {report.collisions} collisions")
    return EXIT_COLLISION if report.collisions else EXIT_OK


def cmd_spikes(args, m: Manifest) -> int:
    table = _table(args, m)
    spikes = spike_report(table, args.factor)
    emit_reports(ReportSet(table=table, spikes=spikes, metadata=_metadata(m, "spikes", factor=args.factor)), args.out)
    print(f"{len(spikes)} spikes at factor {args.factor}")
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "risk": cmd_risk,
    "experiment": cmd_experiment,
    "spikes": cmd_spikes,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        m = _manifest(args)
    except ConfigError as exc:
        _log(f"invalid configuration{f' ({exc.source})' if exc.source else ''}:")
        for p in exc.problems:
            _log(f"  - {p}")
        return EXIT_INVALID
    try:
        return COMMANDS[args.command](args, m)
    except ConfigError as exc:
        _log(f"invalid input: {exc}")
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to one exit code
        _log(f"error: {type(exc).__name__}: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

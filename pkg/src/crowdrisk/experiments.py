"""Leave-one-out decision experiments over a risk table.

Each experiment fixes two of (path, day, time) and chooses the third.  One
fold holds out every candidate for a fixed pair, predicts the option with
the lowest mean risk over the remaining cells, and scores it against the
held-out cells.  Ties on argmin go to the lowest option index.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .risk_engine import IncompleteTable, RiskTable, normalize
from .world_sim import Traversal, TraversalTrace

KINDS = ("which_path", "which_day", "which_time")
RESIM_SEED_OFFSET = 1_000_000_000

# axis of the (path, day, time) array each experiment chooses along
_CHOICE_AXIS = {"which_path": 0, "which_day": 1, "which_time": 2}
FOLD_COUNTS = {"which_path": 49, "which_day": 21, "which_time": 21}


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    runs: int = 100
    base_seed: int = 0
    # (traversal, seed) -> trace; when set, each fold's chosen traversal is driven
    navigate: Callable[[Traversal, int], TraversalTrace] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")


@dataclass(frozen=True)
class FoldRecord:
    held_out: tuple[str, str]
    predicted: str
    truth: str
    correct: bool
    tie: bool
    collisions: int = 0


@dataclass(frozen=True)
class ExperimentReport:
    kind: str
    folds: tuple[FoldRecord, ...]

    @property
    def accuracy(self) -> float:
        return sum(f.correct for f in self.folds) / len(self.folds)

    @property
    def collisions(self) -> int:
        return sum(f.collisions for f in self.folds)

    @property
    def n_folds(self) -> int:
        return len(self.folds)


def _options_and_pairs(table: RiskTable, kind: str):
    axes = [table.paths, table.days, table.times]
    ax = _CHOICE_AXIS[kind]
    options = axes[ax]
    others = [a for i, a in enumerate(axes) if i != ax]
    pairs = [(x, y) for x in others[0] for y in others[1]]
    return ax, options, pairs


def _traversal(kind, option, pair) -> Traversal:
    a, b = pair
    if kind == "which_path":
        return Traversal(option, a, b)
    if kind == "which_day":
        return Traversal(a, option, b)
    return Traversal(a, b, option)


def loocv(table: RiskTable, spec: ExperimentSpec) -> ExperimentReport:
    try:
        arr = table.as_array()
    except IncompleteTable as exc:
        raise IncompleteTable(f"incomplete table: {exc}") from None
    ax, options, pairs = _options_and_pairs(table, spec.kind)
    # (options, pairs) view of the table
    m = np.moveaxis(arr, ax, 0).reshape(len(options), -1)
    n_rest = m.shape[1] - 1

    folds = []
    for j, pair in enumerate(pairs):
        held = m[:, j]
        rest_mean = np.delete(m, j, axis=1).sum(axis=1) / n_rest if n_rest else np.zeros(len(options))
        pred = int(np.argmin(rest_mean))
        truth = int(np.argmin(held))
        tie = bool(np.sum(rest_mean == rest_mean[pred]) > 1 or np.sum(held == held[truth]) > 1)
        correct = bool(held[pred] == held[truth])
        collisions = 0
        if spec.navigate is not None:
            trace = spec.navigate(_traversal(spec.kind, options[pred], pair), spec.base_seed + RESIM_SEED_OFFSET + j)
            collisions = trace.collisions
        folds.append(FoldRecord(pair, options[pred], options[truth], correct, tie, collisions))
    return ExperimentReport(spec.kind, tuple(folds))


def which_path(table: RiskTable, spec: ExperimentSpec | None = None) -> ExperimentReport:
    return loocv(table, _kind(spec, "which_path"))


def which_day(table: RiskTable, spec: ExperimentSpec | None = None) -> ExperimentReport:
    return loocv(table, _kind(spec, "which_day"))


def which_time(table: RiskTable, spec: ExperimentSpec | None = None) -> ExperimentReport:
    return loocv(table, _kind(spec, "which_time"))


def _kind(spec, kind):
    if spec is None:
        return ExperimentSpec(kind)
    if spec.kind != kind:
        raise ValueError(f"spec is for {spec.kind}, not {kind}")
    return spec


@dataclass(frozen=True)
class Spike:
    path: str
    day: str
    time: str
    ratio: float


def spike_report(table: RiskTable, factor: float = 2.0) -> list[Spike]:
    """Traversals whose normalised risk is at least ``factor`` times their path's mean."""
    if not table.normalized:
        table = normalize(table)
    out = []
    n = len(table.days) * len(table.times)
    for p in table.paths:
        avg = 1.0 / n
        for d in table.days:
            for t in table.times:
                ratio = table.normalized[(p, d, t)] / avg
                if ratio >= factor:
                    out.append(Spike(p, d, t, ratio))
    return out


FOLD_COLUMNS = ("fold", "held_out", "predicted", "truth", "correct", "tie", "collisions")


def write_report_csv(report: ExperimentReport, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(FOLD_COLUMNS)
    for k, f in enumerate(report.folds):
        w.writerow([k, "/".join(f.held_out), f.predicted, f.truth, int(f.correct), int(f.tie), f.collisions])
    w.writerow(["summary", report.kind, "", "", repr(report.accuracy), sum(f.tie for f in report.folds), report.collisions])


def write_spikes_csv(spikes: Sequence[Spike], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["path", "day", "time", "ratio_to_path_mean"])
    for s in spikes:
        w.writerow([s.path, s.day, s.time, repr(s.ratio)])

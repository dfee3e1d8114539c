"""Dollar-valued traversal risk.

Per second ``i`` of a traversal the loss of a collision is the number of
pedestrians within the counting radius times the value of a life, and the
step risk is that loss weighted by the network's accident posterior given
the step's evidence.  A traversal's risk is the sum over its seconds; the
expected risk averages seeded Monte Carlo runs.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .bayes_net import Evidence, Network, PedestrianBinning, bin_pedestrians, query
from .controller import VehicleParams, make_policy
from .world_sim import Scenario, SimParams, Traversal, TraversalTrace, run_traversal

ACCIDENT_STATE = "true"
VALUE_OF_LIFE = 10_000_000.0


@dataclass(frozen=True)
class LossParams:
    w1: float = VALUE_OF_LIFE

    def __post_init__(self):
        if not self.w1 > 0:
            raise ValueError("w1 must be positive")


class RunError(RuntimeError):
    def __init__(self, traversal: Traversal, seed: int, cause: Exception):
        self.traversal = traversal
        self.seed = seed
        super().__init__(f"{traversal.id} failed at seed {seed}: {cause}")


def loss(q: int, params: LossParams = LossParams()) -> float:
    if q < 0:
        raise ValueError("pedestrian count must be non-negative")
    return q * params.w1


class Posterior:
    """Memoised ``P(Accident = true | evidence)`` for one network.

    Inference is exact; memoisation only avoids repeating it for the
    handful of distinct evidence tuples a scenario produces.
    """

    def __init__(self, net: Network, state: str = ACCIDENT_STATE):
        self.net = net
        self.state = state
        self._memo: dict[tuple, float] = {}

    def __call__(self, evidence: Evidence) -> float:
        key = tuple(sorted(evidence.items()))
        p = self._memo.get(key)
        if p is None:
            p = query(self.net, self.net.target, self.state, evidence)
            self._memo[key] = p
        return p


def step_risk(
    q: int,
    evidence: Evidence,
    net: Network | Posterior,
    params: LossParams = LossParams(),
    binning: PedestrianBinning | None = PedestrianBinning(),
) -> float:
    """``loss(q) * P(Accident | evidence)``.

    ``evidence["NumPedestrians"]`` must be the bin of ``q`` under
    ``binning`` (pass ``binning=None`` to skip the check).  A zero count is
    zero risk without consulting the network.
    """
    if binning is not None and evidence.get("NumPedestrians") != bin_pedestrians(q, binning):
        raise ValueError(f"evidence NumPedestrians={evidence.get('NumPedestrians')!r} does not match q={q}")
    if q == 0:
        return 0.0
    posterior = net if isinstance(net, Posterior) else Posterior(net)
    return loss(q, params) * posterior(evidence)


@dataclass(frozen=True)
class RiskResult:
    """Risk of one traversal.

    For a single run ``per_step`` is that run's ``R_i``.  For a Monte Carlo
    estimate it is the across-run mean of ``R_i`` (shorter runs padded with
    zeros), so ``sum(per_step) == mean`` either way.  ``std`` is the sample
    standard deviation over runs and is 0 when ``runs == 1``.
    """

    traversal: Traversal
    per_step: tuple[float, ...]
    total: float
    runs: int = 1
    mean: float = 0.0
    std: float = 0.0
    stderr: float = 0.0
    run_totals: tuple[float, ...] = ()
    collisions: int = 0


def traversal_risk(
    trace: TraversalTrace,
    net: Network | Posterior,
    params: LossParams = LossParams(),
    binning: PedestrianBinning | None = None,
) -> RiskResult:
    if not trace.completed:
        raise ValueError("trace is incomplete")
    posterior = net if isinstance(net, Posterior) else Posterior(net)
    steps = tuple(step_risk(r.q, r.evidence, posterior, params, binning) for r in trace.records)
    total = math.fsum(steps)
    return RiskResult(trace.traversal, steps, total, 1, total, 0.0, 0.0, (total,), trace.collisions)


def summarize(traversal: Traversal, singles: Sequence[RiskResult]) -> RiskResult:
    """Fold single-run results, in the given order, into one estimate."""
    n = len(singles)
    if n == 0:
        raise ValueError("need at least one run")
    totals = np.array([s.total for s in singles])
    width = max(len(s.per_step) for s in singles)
    profile = np.zeros(width)
    for s in singles:
        profile[: len(s.per_step)] += s.per_step
    profile /= n
    mean = float(totals.sum() / n)
    std = float(np.std(totals, ddof=1)) if n > 1 else 0.0
    return RiskResult(
        traversal,
        tuple(float(x) for x in profile),
        mean,
        n,
        mean,
        std,
        std / math.sqrt(n),
        tuple(float(t) for t in totals),
        sum(s.collisions for s in singles),
    )


@dataclass(frozen=True)
class RiskJob:
    """Everything a worker needs to evaluate runs of a traversal."""

    scenario: Scenario
    net: Network
    policy_name: str = "safe-default"
    loss: LossParams = LossParams()
    sim: SimParams = SimParams()
    vehicle: VehicleParams = VehicleParams()


_worker_cache: dict[int, tuple] = {}


def _evaluate(job: RiskJob, traversal: Traversal, seeds: Sequence[int]) -> list[RiskResult]:
    key = id(job)
    cached = _worker_cache.get(key)
    if cached is None or cached[0] is not job:
        cached = (job, make_policy(job.policy_name, job.vehicle), Posterior(job.net))
        _worker_cache.clear()
        _worker_cache[key] = cached
    _, policy, posterior = cached
    out = []
    for seed in seeds:
        try:
            trace = run_traversal(job.scenario, traversal, policy, seed, job.sim, job.vehicle)
        except Exception as exc:
            raise RunError(traversal, seed, exc) from exc
        out.append(traversal_risk(trace, posterior, job.loss, job.scenario.binning))
    return out


def _evaluate_task(args):
    return _evaluate(*args)


def run_seeds(base_seed: int, runs: int) -> list[int]:
    return [base_seed + k for k in range(runs)]


def expected_risk(
    job: RiskJob,
    traversal: Traversal,
    runs: int = 100,
    base_seed: int = 0,
    jobs: int = 1,
) -> RiskResult:
    """Monte Carlo mean over ``runs`` seeded traversals (seeds ``base_seed + k``)."""
    return expected_risks(job, [traversal], runs, base_seed, jobs)[0]


def expected_risks(
    job: RiskJob,
    traversals: Sequence[Traversal],
    runs: int = 100,
    base_seed: int = 0,
    jobs: int = 1,
    progress=None,
) -> list[RiskResult]:
    """Like :func:`expected_risk` for many traversals; output order follows input.

    With ``jobs > 1`` traversals are spread over worker processes.  Every
    run is seed-addressed and reduction happens in run-index order, so the
    result does not depend on ``jobs``.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    seeds = run_seeds(base_seed, runs)
    tasks = [(job, t, seeds) for t in traversals]
    results = []
    if jobs <= 1 or len(tasks) <= 1:
        for k, task in enumerate(tasks):
            results.append(summarize(task[1], _evaluate_task(task)))
            if progress:
                progress(k + 1, len(tasks))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for k, singles in enumerate(pool.map(_evaluate_task, tasks)):
                results.append(summarize(tasks[k][1], singles))
                if progress:
                    progress(k + 1, len(tasks))
    return results


# -- tables ------------------------------------------------------------------------


class DegenerateNormalization(ValueError):
    pass


class IncompleteTable(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RiskTable:
    """Mean risk per (path, day, time), plus per-path normalisation."""

    paths: tuple[str, ...]
    days: tuple[str, ...]
    times: tuple[str, ...]
    cells: Mapping[tuple[str, str, str], RiskResult]
    normalized: Mapping[tuple[str, str, str], float] = field(default_factory=dict)
    denominators: Mapping[str, float] = field(default_factory=dict)

    def mean(self, path: str, day: str, time: str) -> float:
        return self.cells[(path, day, time)].mean

    def keys(self):
        return [(p, d, t) for p in self.paths for d in self.days for t in self.times]

    def missing(self) -> list[tuple[str, str, str]]:
        return [k for k in self.keys() if k not in self.cells]

    def as_array(self) -> np.ndarray:
        """Means as a ``(paths, days, times)`` array; raises if a cell is missing."""
        if self.missing():
            raise IncompleteTable(f"incomplete table: {len(self.missing())} cells missing")
        return np.array([[[self.mean(p, d, t) for t in self.times] for d in self.days] for p in self.paths])

    def scaled(self, c: float) -> "RiskTable":
        cells = {
            k: RiskResult(
                r.traversal,
                tuple(c * x for x in r.per_step),
                c * r.total,
                r.runs,
                c * r.mean,
                c * r.std,
                c * r.stderr,
                tuple(c * x for x in r.run_totals),
                r.collisions,
            )
            for k, r in self.cells.items()
        }
        return RiskTable(self.paths, self.days, self.times, cells)

    @classmethod
    def from_means(cls, means: Mapping[tuple[str, str, str], float], paths=None, days=None, times=None) -> "RiskTable":
        paths = tuple(paths or sorted({k[0] for k in means}))
        days = tuple(days or list(dict.fromkeys(k[1] for k in means)))
        times = tuple(times or list(dict.fromkeys(k[2] for k in means)))
        cells = {k: RiskResult(Traversal(*k), (float(v),), float(v), 1, float(v)) for k, v in means.items()}
        return cls(paths, days, times, cells)


def normalize(table: RiskTable) -> RiskTable:
    """Divide each path's cells by that path's total over all (day, time)."""
    normalized = {}
    denominators = {}
    for p in table.paths:
        keys = [(p, d, t) for d in table.days for t in table.times]
        missing = [k for k in keys if k not in table.cells]
        if missing:
            raise IncompleteTable(f"path {p}: missing cells {missing[:3]}")
        means = [table.cells[k].mean for k in keys]
        total = math.fsum(means)
        if total == 0.0:
            raise DegenerateNormalization(f"degenerate normalization: path {p} has zero total risk")
        denominators[p] = total
        for k, m in zip(keys, means):
            normalized[k] = m / total
    return RiskTable(table.paths, table.days, table.times, table.cells, normalized, denominators)


def build_risk_table(
    job: RiskJob,
    runs: int = 100,
    base_seed: int = 0,
    jobs: int = 1,
    progress=None,
    traversals: Sequence[Traversal] | None = None,
) -> RiskTable:
    """Expected risk of every traversal, normalised when the table is
    complete and no path sums to zero."""
    scn = job.scenario
    traversals = list(traversals or scn.traversals())
    results = expected_risks(job, traversals, runs, base_seed, jobs, progress)
    cells = {tuple(t): r for t, r in zip(traversals, results)}
    table = RiskTable(tuple(scn.path_ids), scn.days, scn.times, cells)
    if table.missing():
        return table
    try:
        return normalize(table)
    except DegenerateNormalization:
        # a path with no risk anywhere is a valid result; it just has no shares
        return table

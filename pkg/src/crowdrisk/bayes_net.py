"""Discrete Bayesian networks with exact inference.

A network is an ordered list of :class:`NodeSpec` plus the name of the
accident (target) node.  CPT rows are stored row-major over the declared
parent order: for parents ``(P1, P2)`` with ``|P2| = 3`` the row for
``P1 = i, P2 = j`` is ``cpt[i * 3 + j]``.

Two exact routes are provided.  :func:`enumeration_query` walks the joint
assignment space in topological order; :func:`elimination_query` runs sum-
product variable elimination over numpy factors.  :func:`query` picks one
based on the size of the hidden-variable space.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

ROW_SUM_TOL = 1e-9

# Input nodes the risk engine feeds at every timestep.
INPUT_NODES = {"NumPedestrians": 4, "Night": 2, "Weekday": 4, "Weather": 4}

# Above this many hidden joint assignments, enumeration hands over to
# variable elimination.
ENUMERATION_LIMIT = 1 << 16

Evidence = Mapping[str, str]


class ImpossibleEvidenceError(ValueError):
    """Raised when the evidence set has zero probability under the network."""

    def __init__(self, evidence: Evidence):
        self.evidence = dict(evidence)
        items = ", ".join(f"{k}={v}" for k, v in sorted(self.evidence.items()))
        super().__init__(f"impossible evidence: P({items}) = 0")


@dataclass(frozen=True)
class NodeSpec:
    name: str
    states: tuple[str, ...]
    parents: tuple[str, ...] = ()
    cpt: tuple[tuple[float, ...], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "parents", tuple(self.parents))
        object.__setattr__(self, "cpt", tuple(tuple(float(p) for p in row) for row in self.cpt))

    def state_index(self, label: str) -> int:
        try:
            return self.states.index(label)
        except ValueError:
            raise ValueError(f"node {self.name!r} has no state {label!r}") from None


@dataclass(frozen=True)
class Network:
    nodes: tuple[NodeSpec, ...]
    target: str

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))

    def node(self, name: str) -> NodeSpec:
        for n in self.nodes:
            if n.name == name:
                return n
        raise ValueError(f"unknown node {name!r}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n.name for n in self.nodes)

    def topological_order(self) -> list[NodeSpec]:
        """Kahn's algorithm, ties broken by declaration order.

        Raises ``ValueError`` on a cycle or a dangling parent.
        """
        by_name = {n.name: n for n in self.nodes}
        pending = {n.name: set(n.parents) for n in self.nodes}
        for n in self.nodes:
            missing = [p for p in n.parents if p not in by_name]
            if missing:
                raise ValueError(f"node {n.name!r} has unknown parents {missing}")
        order = []
        done: set[str] = set()
        while len(order) < len(self.nodes):
            ready = [n for n in self.nodes if n.name not in done and pending[n.name] <= done]
            if not ready:
                raise ValueError("network contains a cycle")
            order.append(ready[0])
            done.add(ready[0].name)
        return order


@dataclass(frozen=True)
class PedestrianBinning:
    """Maps a raw pedestrian count to one of four ``NumPedestrians`` states.

    The bin of ``count`` is the index of the first threshold strictly
    greater than ``count``, or 3 if there is none.
    """

    thresholds: tuple[int, int, int] = (1, 6, 16)
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        t = tuple(int(x) for x in self.thresholds)
        if len(t) != 3 or t[0] < 0 or not (t[0] < t[1] < t[2]):
            raise ValueError(f"thresholds must be 3 strictly ascending non-negative ints, got {t}")
        object.__setattr__(self, "thresholds", t)
        if self.labels is None:
            object.__setattr__(self, "labels", _range_labels(t))
        elif len(self.labels) != 4 or len(set(self.labels)) != 4:
            raise ValueError("binning needs 4 distinct labels")
        else:
            object.__setattr__(self, "labels", tuple(self.labels))

    def index(self, count: int) -> int:
        for i, t in enumerate(self.thresholds):
            if count < t:
                return i
        return 3


def _range_labels(t):
    edges = (0,) + t
    labels = []
    for lo, hi in zip(edges, t):
        labels.append(str(lo) if hi - lo == 1 else f"{lo}-{hi - 1}")
    labels.append(f"{t[-1]}+")
    return tuple(labels)


def bin_pedestrians(count: int, binning: PedestrianBinning = PedestrianBinning()) -> str:
    """State label of ``NumPedestrians`` for a raw count."""
    if count < 0:
        raise ValueError("pedestrian count must be non-negative")
    return binning.labels[binning.index(count)]


def validate(net: Network, require_inputs: bool = False) -> list[str]:
    """Collect every structural problem in ``net``; an empty list means valid.

    With ``require_inputs`` the four risk-engine input nodes must exist
    with their expected state counts.
    """
    problems = []
    names = [n.name for n in net.nodes]
    seen = set()
    for name in names:
        if name in seen:
            problems.append(f"duplicate node name {name!r}")
        seen.add(name)
    by_name = {n.name: n for n in net.nodes}
    if net.target not in by_name:
        problems.append(f"target node {net.target!r} does not exist")

    for n in net.nodes:
        if len(n.states) < 2:
            problems.append(f"{n.name}: needs at least 2 states")
        if len(set(n.states)) != len(n.states):
            problems.append(f"{n.name}: duplicate state labels")
        dangling = [p for p in n.parents if p not in by_name]
        for p in dangling:
            problems.append(f"{n.name}: parent {p!r} does not exist")
        if len(set(n.parents)) != len(n.parents):
            problems.append(f"{n.name}: repeated parent")
        if n.name in n.parents:
            problems.append(f"{n.name}: cycle (node is its own parent)")
        if dangling:
            continue
        n_rows = math.prod(len(by_name[p].states) for p in n.parents)
        if len(n.cpt) != n_rows:
            problems.append(f"{n.name}: cpt has {len(n.cpt)} rows, expected {n_rows}")
        for r, row in enumerate(n.cpt):
            if len(row) != len(n.states):
                problems.append(f"{n.name}: row {r} has length {len(row)}, expected {len(n.states)}")
                continue
            if any(not (0.0 <= p <= 1.0) or math.isnan(p) for p in row):
                problems.append(f"{n.name}: row {r} has a probability outside [0, 1]")
            if abs(sum(row) - 1.0) > ROW_SUM_TOL:
                problems.append(f"{n.name}: row sum ≠ 1 in row {r} (got {sum(row):.12g})")

    try:
        net.topological_order()
    except ValueError as exc:
        if "cycle" in str(exc):
            problems.append("cycle: network is not acyclic")

    if require_inputs:
        for name, k in INPUT_NODES.items():
            if name not in by_name:
                problems.append(f"input node {name!r} is missing")
            elif len(by_name[name].states) != k:
                problems.append(f"input node {name!r} must have {k} states")
    return problems


def check_evidence(net: Network, evidence: Evidence) -> None:
    for name, label in evidence.items():
        if name not in net.names:
            raise ValueError(f"evidence references unknown node {name!r}")
        net.node(name).state_index(label)


def _strides(net_nodes, node):
    sizes = [len(net_nodes[p].states) for p in node.parents]
    strides = [1] * len(sizes)
    for k in range(len(sizes) - 2, -1, -1):
        strides[k] = strides[k + 1] * sizes[k + 1]
    return strides


def _joint_mass(order, by_name, fixed: dict[str, int]) -> float:
    """Sum of products of CPT entries over all completions of ``fixed``."""
    strides = {n.name: _strides(by_name, n) for n in order}

    def recurse(k, assign):
        if k == len(order):
            return 1.0
        node = order[k]
        row_idx = sum(assign[p] * s for p, s in zip(node.parents, strides[node.name]))
        row = node.cpt[row_idx]
        if node.name in assign:
            p = row[assign[node.name]]
            return 0.0 if p == 0.0 else p * recurse(k + 1, assign)
        total = 0.0
        for s, p in enumerate(row):
            if p == 0.0:
                continue
            assign[node.name] = s
            total += p * recurse(k + 1, assign)
        del assign[node.name]
        return total

    return recurse(0, dict(fixed))


def enumeration_query(net: Network, target: str, target_state: str, evidence: Evidence) -> float:
    """Posterior by full enumeration over the hidden variables."""
    check_evidence(net, evidence)
    order = net.topological_order()
    by_name = {n.name: n for n in net.nodes}
    tnode = by_name[target]
    t_idx = tnode.state_index(target_state)
    fixed = {k: by_name[k].state_index(v) for k, v in evidence.items()}

    if target in fixed:
        if _joint_mass(order, by_name, fixed) == 0.0:
            raise ImpossibleEvidenceError(evidence)
        return 1.0 if fixed[target] == t_idx else 0.0

    masses = []
    for s in range(len(tnode.states)):
        masses.append(_joint_mass(order, by_name, {**fixed, target: s}))
    z = sum(masses)
    if z == 0.0:
        raise ImpossibleEvidenceError(evidence)
    return masses[t_idx] / z


class _Factor:
    __slots__ = ("vars", "table")

    def __init__(self, vars_, table):
        self.vars = tuple(vars_)
        self.table = table

    def multiply(self, other):
        vars_ = self.vars + tuple(v for v in other.vars if v not in self.vars)
        letters = {v: chr(ord("a") + i) for i, v in enumerate(vars_)}
        spec = "".join(letters[v] for v in self.vars) + "," + "".join(letters[v] for v in other.vars)
        spec += "->" + "".join(letters[v] for v in vars_)
        return _Factor(vars_, np.einsum(spec, self.table, other.table))

    def sum_out(self, var):
        ax = self.vars.index(var)
        return _Factor(self.vars[:ax] + self.vars[ax + 1 :], self.table.sum(axis=ax))


def _cpt_factor(node, by_name, fixed):
    shape = [len(by_name[p].states) for p in node.parents] + [len(node.states)]
    table = np.asarray(node.cpt, dtype=float).reshape(shape)
    vars_ = list(node.parents) + [node.name]
    index = []
    kept = []
    for v in vars_:
        if v in fixed:
            index.append(fixed[v])
        else:
            index.append(slice(None))
            kept.append(v)
    return _Factor(kept, table[tuple(index)])


def elimination_query(net: Network, target: str, target_state: str, evidence: Evidence) -> float:
    """Posterior by sum-product variable elimination (min-size ordering)."""
    check_evidence(net, evidence)
    net.topological_order()
    by_name = {n.name: n for n in net.nodes}
    t_idx = by_name[target].state_index(target_state)
    fixed = {k: by_name[k].state_index(v) for k, v in evidence.items()}
    factors = [_cpt_factor(n, by_name, fixed) for n in net.nodes]

    if target in fixed:
        z = _product_all(factors).table.sum()
        if z == 0.0:
            raise ImpossibleEvidenceError(evidence)
        return 1.0 if fixed[target] == t_idx else 0.0

    hidden = [n.name for n in net.nodes if n.name not in fixed and n.name != target]
    while hidden:
        # greedy: eliminate the variable whose combined factor is smallest
        def cost(v):
            involved = set()
            for f in factors:
                if v in f.vars:
                    involved.update(f.vars)
            return math.prod(len(by_name[u].states) for u in involved)

        var = min(hidden, key=cost)
        hidden.remove(var)
        touching = [f for f in factors if var in f.vars]
        factors = [f for f in factors if var not in f.vars]
        if touching:
            factors.append(_product_all(touching).sum_out(var))

    result = _product_all(factors)
    dist = result.table if result.vars == (target,) else _align(result, target)
    z = dist.sum()
    if z == 0.0:
        raise ImpossibleEvidenceError(evidence)
    return float(dist[t_idx] / z)


def _product_all(factors):
    out = _Factor((), np.array(1.0))
    for f in factors:
        out = out.multiply(f)
    return out


def _align(f, target):
    # only scalars and the target remain; collapse everything else
    for v in f.vars:
        if v != target:
            f = f.sum_out(v)
    return f.table


def hidden_space_size(net: Network, target: str, evidence: Evidence) -> int:
    return math.prod(len(n.states) for n in net.nodes if n.name not in evidence and n.name != target)


def query(net: Network, target: str, target_state: str, evidence: Evidence | None = None) -> float:
    """Exact ``P(target = target_state | evidence)``.

    Uses enumeration when the hidden joint space is small, else variable
    elimination.  Raises :class:`ImpossibleEvidenceError` if
    ``P(evidence) = 0``.
    """
    evidence = dict(evidence or {})
    net.node(target).state_index(target_state)
    if hidden_space_size(net, target, evidence) <= ENUMERATION_LIMIT:
        return enumeration_query(net, target, target_state, evidence)
    return elimination_query(net, target, target_state, evidence)


# -- JSON form ---------------------------------------------------------------


def _nest(rows, sizes):
    if not sizes:
        return list(rows[0])
    step = len(rows) // sizes[0]
    return [_nest(rows[k * step : (k + 1) * step], sizes[1:]) for k in range(sizes[0])]


def _flatten(nested, depth):
    if depth == 0:
        return [list(nested)]
    out = []
    for sub in nested:
        out.extend(_flatten(sub, depth - 1))
    return out


def network_to_dict(net: Network) -> dict:
    by_name = {n.name: n for n in net.nodes}
    nodes = []
    for n in net.nodes:
        sizes = [len(by_name[p].states) for p in n.parents]
        nodes.append(
            {
                "name": n.name,
                "states": list(n.states),
                "parents": list(n.parents),
                "cpt": _nest(n.cpt, sizes),
            }
        )
    return {"target": net.target, "nodes": nodes}


def network_from_dict(doc: Mapping) -> Network:
    """Build a network from its JSON form.

    ``cpt`` is nested one level per parent (declared order) with the node's
    own distribution innermost.  A root node's ``cpt`` is a flat list.
    Shape problems surface as ``ValueError``; semantic ones are left to
    :func:`validate`.
    """
    raw = doc["nodes"]
    nodes = []
    for d in raw:
        parents = list(d.get("parents", []))
        cpt = d["cpt"]
        try:
            rows = _flatten(cpt, len(parents))
            nodes.append(NodeSpec(d["name"], tuple(d["states"]), tuple(parents), tuple(tuple(r) for r in rows)))
        except TypeError:
            raise ValueError(f"{d['name']}: cpt nesting does not match {len(parents)} parents") from None
    return Network(tuple(nodes), doc["target"])

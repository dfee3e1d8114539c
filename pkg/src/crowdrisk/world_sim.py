"""Seeded crowd simulation and ego traversals.

Pedestrians are point particles that walk in straight lines between the
spawn points of their home location.  A run owns one numpy ``Generator``;
spawning and every later destination/speed redraw consume it in a fixed
order, so a ``(scenario, traversal, policy, seed)`` tuple fully determines
the resulting trace.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, NamedTuple, Sequence

import numpy as np

from .bayes_net import PedestrianBinning, bin_pedestrians
from .controller import (
    EMPTY_GRID,
    ROI_RADIUS,
    Policy,
    VehicleParams,
    VehicleState,
    apply_action,
    build_grid,
)
from .geometry import Polyline

SPEED_MIN = 0.2
SPEED_MAX = 1.8
LOCATION_KINDS = ("commercial", "mall", "residential", "bazaar", "parking", "tower")
DAYS = ("Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday")
DEFAULT_WEEKDAY_MAP = {
    "Monday": "mon-thu",
    "Tuesday": "mon-thu",
    "Wednesday": "mon-thu",
    "Thursday": "mon-thu",
    "Friday": "fri",
    "Saturday": "sat",
    "Sunday": "sun",
}


class StepCapExceeded(RuntimeError):
    """The ego never reached its goal within the tick budget."""


@dataclass(frozen=True)
class CountPdf:
    """Explicit categorical distribution over pedestrian counts."""

    support: tuple[tuple[int, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "support", tuple((int(c), float(w)) for c, w in self.support))
        object.__setattr__(self, "_cum", np.cumsum([w for _, w in self.support]))

    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    @property
    def max_count(self) -> int:
        return max(c for c, _ in self.support)

    @property
    def mean(self) -> float:
        return sum(c * w for c, w in self.support)

    def problems(self) -> list[str]:
        out = []
        if not self.support:
            out.append("empty support")
            return out
        counts = [c for c, _ in self.support]
        if len(set(counts)) != len(counts):
            out.append("counts are not distinct")
        if any(c < 0 for c in counts):
            out.append("negative count")
        if any(w < 0 for _, w in self.support):
            out.append("negative weight")
        if abs(sum(w for _, w in self.support) - 1.0) > 1e-9:
            out.append("weights do not sum to 1")
        return out

    def draw(self, rng: np.random.Generator) -> int:
        u = rng.random() * self._cum[-1]
        k = int(np.searchsorted(self._cum, u, side="right"))
        return self.support[min(k, len(self.support) - 1)][0]


@dataclass(frozen=True)
class Location:
    id: str
    position: tuple[float, float]
    kind: str
    spawn_points: np.ndarray
    max_pedestrians: int

    def __post_init__(self):
        pts = np.asarray(self.spawn_points, dtype=float).reshape(-1, 2)
        pts.flags.writeable = False
        object.__setattr__(self, "spawn_points", pts)


class Traversal(NamedTuple):
    path: str
    day: str
    time: str

    @property
    def id(self) -> str:
        return f"{self.path}/{self.day}/{self.time}"

    @classmethod
    def parse(cls, text: str) -> "Traversal":
        parts = text.split("/")
        if len(parts) != 3:
            raise ValueError(f"traversal must look like PATH/DAY/TIME, got {text!r}")
        return cls(*parts)


@dataclass(frozen=True, eq=False)
class Scenario:
    locations: tuple[Location, ...]
    paths: Mapping[str, np.ndarray]
    days: tuple[str, ...]
    times: tuple[str, ...]
    crowd_pdfs: Mapping[tuple[str, str, str], CountPdf]
    night_map: Mapping[str, bool]
    weather_map: Mapping[tuple[str, str], str]
    binning: PedestrianBinning = PedestrianBinning()
    weekday_map: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_WEEKDAY_MAP))

    def __post_init__(self):
        object.__setattr__(self, "locations", tuple(self.locations))
        object.__setattr__(self, "days", tuple(self.days))
        object.__setattr__(self, "times", tuple(self.times))
        object.__setattr__(self, "_polylines", {k: Polyline(v) for k, v in self.paths.items()})

    @property
    def path_ids(self) -> list[str]:
        return sorted(self.paths)

    def polyline(self, path_id: str) -> Polyline:
        return self._polylines[path_id]

    def traversals(self) -> list[Traversal]:
        """Every (path, day, time) in canonical order: path, then day, then time."""
        return [Traversal(p, d, t) for p in self.path_ids for d in self.days for t in self.times]

    def evidence_constants(self, day: str, time: str) -> dict[str, str]:
        return {
            "Night": "true" if self.night_map[time] else "false",
            "Weekday": self.weekday_map[day],
            "Weather": self.weather_map[(day, time)],
        }


@dataclass(frozen=True)
class SimParams:
    tick_rate: int = 15
    radius: float = 20.0
    step_cap_factor: float = 10.0

    @property
    def dt(self) -> float:
        return 1.0 / self.tick_rate


# -- pedestrians -----------------------------------------------------------------


@dataclass(frozen=True)
class Pedestrian:
    position: tuple[float, float]
    destination: tuple[float, float]
    speed: float


class Crowd:
    """All pedestrians of a run as parallel arrays.

    ``home[k]`` indexes the location pedestrian ``k`` belongs to; its
    destinations are always drawn from that location's spawn points.
    """

    def __init__(self, positions, destinations, speeds, home, spawn_sets):
        self.positions = np.asarray(positions, dtype=float).reshape(-1, 2)
        self.destinations = np.asarray(destinations, dtype=float).reshape(-1, 2)
        self.speeds = np.asarray(speeds, dtype=float).reshape(-1)
        self.home = np.asarray(home, dtype=int).reshape(-1)
        self.spawn_sets = spawn_sets
        self._n_spawn = np.array([len(s) for s in spawn_sets], dtype=int)
        self._all_points = np.concatenate(spawn_sets) if spawn_sets else np.zeros((0, 2))
        self._offsets = np.concatenate([[0], np.cumsum(self._n_spawn)[:-1]]).astype(int) if spawn_sets else np.zeros(0, int)
        # per-pedestrian unit heading and distance left on the current leg
        self._unit = np.zeros_like(self.positions)
        self._left = np.zeros(len(self.positions))
        self._refresh(slice(None))

    def _refresh(self, idx) -> None:
        d = self.destinations[idx] - self.positions[idx]
        dist = np.hypot(d[:, 0], d[:, 1])
        safe = np.where(dist > 0, dist, 1.0)
        self._unit[idx] = np.where((dist > 0)[:, None], d / safe[:, None], 0.0)
        self._left[idx] = dist

    def __len__(self):
        return len(self.positions)

    def __iter__(self) -> Iterator[Pedestrian]:
        for p, d, s in zip(self.positions, self.destinations, self.speeds):
            yield Pedestrian((float(p[0]), float(p[1])), (float(d[0]), float(d[1])), float(s))

    def copy(self) -> "Crowd":
        return Crowd(self.positions.copy(), self.destinations.copy(), self.speeds.copy(), self.home.copy(), self.spawn_sets)

    def counts_by_location(self) -> np.ndarray:
        return np.bincount(self.home, minlength=len(self.spawn_sets))

    def velocities(self, idx=None) -> np.ndarray:
        """Ground velocities, optionally only for pedestrians ``idx``."""
        if idx is None:
            return self._unit * self.speeds[:, None]
        return self._unit[idx] * self.speeds[idx, None]

    def redraw(self, idx: np.ndarray, rng: np.random.Generator) -> None:
        """New destination and speed for pedestrians ``idx`` (ascending)."""
        if len(idx) == 0:
            return
        homes = self.home[idx]
        pick = np.floor(rng.random(len(idx)) * self._n_spawn[homes]).astype(int)
        self.destinations[idx] = self._all_points[self._offsets[homes] + pick]
        self.speeds[idx] = rng.uniform(SPEED_MIN, SPEED_MAX, len(idx))
        self._refresh(idx)

    def step(self, dt: float, rng: np.random.Generator, ego=None) -> int:
        """Advance every pedestrian by ``speed * dt`` toward its destination.

        Arrivals (``distance < speed * dt``) snap to the destination and
        redraw.  With ``ego = (center, heading_deg, length, width)`` a
        pedestrian whose step would take it from outside to inside the ego
        rectangle holds position and redraws instead.  Returns how many
        pedestrians are inside the ego rectangle afterwards (0 without ego).
        """
        if dt <= 0:
            raise ValueError("dt must be positive")
        if len(self.positions) == 0:
            return 0
        reach = self.speeds * dt
        arrived = self._left < reach
        step = np.where(arrived, 0.0, reach)
        new = self.positions + self._unit * step[:, None]
        any_arrived = arrived.any()
        if any_arrived:
            new[arrived] = self.destinations[arrived]

        blocked = None
        inside = 0
        if ego is not None:
            center, heading, length, width = ego
            r = 0.5 * math.hypot(length, width) + 1e-9
            dx = new[:, 0] - center[0]
            dy = new[:, 1] - center[1]
            near = np.flatnonzero(dx * dx + dy * dy <= r * r)
            if len(near):
                th = math.radians(heading)
                c, s = math.cos(th), math.sin(th)
                hl, hw = length / 2.0, width / 2.0
                into = (np.abs(dx[near] * c + dy[near] * s) <= hl) & (np.abs(dy[near] * c - dx[near] * s) <= hw)
                if into.any():
                    cand = near[into]
                    ox = self.positions[cand, 0] - center[0]
                    oy = self.positions[cand, 1] - center[1]
                    was = (np.abs(ox * c + oy * s) <= hl) & (np.abs(oy * c - ox * s) <= hw)
                    inside = int(np.count_nonzero(was))
                    hit = cand[~was]
                    if len(hit):
                        blocked = np.zeros(len(new), dtype=bool)
                        blocked[hit] = True
                        new[hit] = self.positions[hit]
                        step[hit] = 0.0
                        arrived &= ~blocked

        self.positions = new
        self._left -= step
        if blocked is not None:
            self.redraw(np.flatnonzero(arrived | blocked), rng)
        elif any_arrived:
            self.redraw(np.flatnonzero(arrived), rng)
        return inside


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(int(seed))


def spawn(scenario: Scenario, day: str, time: str, seed) -> Crowd:
    """Draw the initial crowd for one (day, time).

    For each location in declaration order: a count from its PDF, that many
    spawn points (without replacement unless the count exceeds the point
    set), one destination per pedestrian from the same point set, and a
    uniform speed in ``[0.2, 1.8]`` m/s.
    """
    if day not in scenario.days or time not in scenario.times:
        raise ValueError(f"unknown day/time {day!r}/{time!r}")
    rng = _as_rng(seed)
    pos, dest, speed, home = [], [], [], []
    for k, loc in enumerate(scenario.locations):
        count = scenario.crowd_pdfs[(loc.id, day, time)].draw(rng)
        count = min(count, loc.max_pedestrians)
        if count == 0:
            continue
        pts = loc.spawn_points
        n = len(pts)
        start = rng.choice(n, size=count, replace=False) if count <= n else rng.integers(0, n, size=count)
        goal = rng.integers(0, n, size=count)
        pos.append(pts[start])
        dest.append(pts[goal])
        speed.append(rng.uniform(SPEED_MIN, SPEED_MAX, count))
        home.append(np.full(count, k))
    spawn_sets = [loc.spawn_points for loc in scenario.locations]
    if not pos:
        return Crowd(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0), np.zeros(0, int), spawn_sets)
    return Crowd(np.concatenate(pos), np.concatenate(dest), np.concatenate(speed), np.concatenate(home), spawn_sets)


def step_pedestrians(crowd: Crowd, dt: float, seed, ego=None) -> Crowd:
    """Functional form of :meth:`Crowd.step`; the input crowd is left untouched."""
    out = crowd.copy()
    out.step(dt, _as_rng(seed), ego)
    return out


def count_within(position, pedestrians, radius: float) -> int:
    """Pedestrians at Euclidean distance ``<= radius`` (closed ball)."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    pts = pedestrians.positions if isinstance(pedestrians, Crowd) else np.asarray(pedestrians, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return 0
    dx = pts[:, 0] - position[0]
    dy = pts[:, 1] - position[1]
    return int(np.count_nonzero(dx * dx + dy * dy <= radius * radius))


# -- traversals --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TraceRecord:
    i: int
    vehicle: VehicleState
    pedestrians: np.ndarray
    q: int
    evidence: Mapping[str, str]
    collision: bool

    def key(self):
        """Everything except pedestrian positions, for cheap equality checks."""
        return (self.i, self.vehicle, self.q, tuple(sorted(self.evidence.items())), self.collision)


@dataclass(frozen=True, eq=False)
class TraversalTrace:
    traversal: Traversal
    seed: int | None
    records: tuple[TraceRecord, ...]
    completed: bool

    @property
    def n_steps(self) -> int:
        return len(self.records)

    @property
    def collisions(self) -> int:
        return sum(1 for r in self.records if r.collision)

    def same_as(self, other: "TraversalTrace") -> bool:
        if self.traversal != other.traversal or len(self.records) != len(other.records):
            return False
        return all(
            a.key() == b.key() and np.array_equal(a.pedestrians, b.pedestrians)
            for a, b in zip(self.records, other.records)
        )


def free_flow_duration(path: Polyline, params: VehicleParams) -> float:
    """Seconds to drive ``path`` with nobody around: accelerate at ``a_max``
    to cruise speed, then hold it."""
    v = params.cruise_speed
    ramp = v * v / (2 * params.a_max)
    if ramp >= path.length:
        return math.sqrt(2 * path.length / params.a_max)
    return v / params.a_max + (path.length - ramp) / v


def run_traversal(
    scenario: Scenario,
    traversal: Traversal,
    policy: Policy,
    seed: int,
    sim: SimParams = SimParams(),
    vehicle_params: VehicleParams = VehicleParams(),
    initial_speed: float = 0.0,
) -> TraversalTrace:
    """Drive one traversal through a freshly spawned crowd.

    A record is opened at every whole second (every ``tick_rate`` ticks)
    with the state at that instant; its collision flag covers the ticks
    until the next record.
    """
    path_id, day, time = traversal
    if path_id not in scenario.paths:
        raise ValueError(f"unknown path {path_id!r}")
    rng = _as_rng(seed)
    crowd = spawn(scenario, day, time, rng)
    path = scenario.polyline(path_id)
    dt = sim.dt
    cap = int(math.ceil(sim.step_cap_factor * free_flow_duration(path, vehicle_params) * sim.tick_rate))
    constants = scenario.evidence_constants(day, time)
    labels = scenario.binning
    ego_dims = (vehicle_params.length, vehicle_params.width)
    reach2 = ROI_RADIUS**2

    vehicle = VehicleState.at_start(path, initial_speed)
    records: list[TraceRecord] = []
    pending = None
    collided = False
    tick = 0
    while vehicle.distance < path.length:
        if tick >= cap:
            raise StepCapExceeded(f"{traversal.id} seed {seed}: goal not reached after {cap} ticks")
        if tick % sim.tick_rate == 0:
            if pending is not None:
                records.append(TraceRecord(*pending, collided))
            q = count_within(vehicle.position, crowd, sim.radius)
            evidence = {"NumPedestrians": bin_pedestrians(q, labels), **constants}
            pending = (tick // sim.tick_rate, vehicle, crowd.positions.copy(), q, evidence)
            collided = False

        grid = EMPTY_GRID
        pos = crowd.positions
        if len(pos):
            ex, ey = vehicle.position
            idx = np.flatnonzero((pos[:, 0] - ex) ** 2 + (pos[:, 1] - ey) ** 2 <= reach2)
            if len(idx):
                grid = build_grid(vehicle, pos[idx], crowd.velocities(idx))
        action = policy(grid, vehicle)
        vehicle = apply_action(vehicle, action, dt, path, vehicle_params)
        if crowd.step(dt, rng, (vehicle.position, vehicle.heading) + ego_dims):
            collided = True
        tick += 1

    if pending is not None:
        records.append(TraceRecord(*pending, collided))
    return TraversalTrace(traversal, seed, tuple(records), True)


TRACE_COLUMNS = ("traversal_id", "i", "q_i", "night", "weekday_state", "weather_state", "collision", "x", "y", "speed")


def trace_rows(trace: TraversalTrace) -> Iterator[list]:
    for r in trace.records:
        ev = r.evidence
        yield [
            trace.traversal.id,
            r.i,
            r.q,
            ev["Night"],
            ev["Weekday"],
            ev["Weather"],
            int(r.collision),
            repr(r.vehicle.position[0]),
            repr(r.vehicle.position[1]),
            repr(r.vehicle.speed),
        ]


def write_trace_csv(traces: Sequence[TraversalTrace] | TraversalTrace, fh) -> None:
    if isinstance(traces, TraversalTrace):
        traces = [traces]
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for t in traces:
        w.writerows(trace_rows(t))

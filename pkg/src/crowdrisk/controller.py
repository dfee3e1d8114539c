"""Ego-centric ROI grid, throttle actions, vehicle kinematics and policies.

Grid frame: row index is longitudinal (row 0 at the front edge of the ROI),
column index is lateral (column 0 on the ego's left).  The ROI spans
``L/5`` behind to ``4L/5`` ahead of the ego centre of gravity and ``W/2``
either side, so the centre of gravity falls in cell ``(4L/5l, W/2w)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .geometry import Polyline, to_ego_frame

ROI_LENGTH = 20.0
ROI_WIDTH = 15.0
CELL_LENGTH = 0.5
CELL_WIDTH = 0.5
ROWS = int(round(ROI_LENGTH / CELL_LENGTH))
COLS = int(round(ROI_WIDTH / CELL_WIDTH))
ROI_AHEAD = 4.0 * ROI_LENGTH / 5.0
EGO_CELL = (int(round(4 * ROI_LENGTH / (5 * CELL_LENGTH))), int(round(ROI_WIDTH / (2 * CELL_WIDTH))))

EGO_LENGTH = 4.5
EGO_WIDTH = 2.0

EMPTY = 0.0
PEDESTRIAN = 1.0
EGO = 2.0

OCCUPANCY, REL_SPEED, REL_HEADING = 0, 1, 2


class Action(Enum):
    FULL_BRAKE = ("a0", -1.0)
    DECELERATE = ("a1", -0.4)
    ACCELERATE_1 = ("a2", 0.2)
    ACCELERATE_2 = ("a3", 1.0)

    @property
    def id(self) -> str:
        return self.value[0]

    @property
    def throttle(self) -> float:
        return self.value[1]


@dataclass(frozen=True)
class VehicleParams:
    a_max: float = 3.0
    a_brake: float = -6.0
    v_max: float = 8.33
    cruise_speed: float = 7.0
    length: float = EGO_LENGTH
    width: float = EGO_WIDTH
    corridor_margin: float = 0.5
    min_lookahead: float = 5.0
    horizon: float = 1.5
    creep_speed: float = 1.0

    def problems(self) -> list[str]:
        out = []
        if self.a_max <= 0:
            out.append("a_max must be > 0")
        if self.a_brake >= 0:
            out.append("a_brake must be < 0")
        if self.v_max <= 0:
            out.append("v_max must be > 0")
        if not (0 < self.cruise_speed <= self.v_max):
            out.append("cruise_speed must lie in (0, v_max]")
        if self.horizon < 0:
            out.append("horizon must be >= 0")
        return out


@dataclass(frozen=True)
class VehicleState:
    """Ego pose on its path.

    ``cursor`` is the index of the waypoint that starts the segment being
    driven; it equals the last waypoint index once the goal is reached.
    ``distance`` is the arc length travelled.
    """

    position: tuple[float, float]
    heading: float
    speed: float
    cursor: int = 0
    distance: float = 0.0

    @classmethod
    def at_start(cls, path: Polyline, speed: float = 0.0) -> "VehicleState":
        x, y, heading, _ = path.locate(0.0)
        return cls((x, y), heading, speed, 0, 0.0)

    def velocity(self) -> np.ndarray:
        th = math.radians(self.heading)
        return np.array([self.speed * math.cos(th), self.speed * math.sin(th)])


def apply_action(
    vehicle: VehicleState,
    action: Action,
    dt: float,
    path: Polyline,
    params: VehicleParams = VehicleParams(),
) -> VehicleState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    throttle = action.throttle
    accel = throttle * params.a_max if throttle > 0 else throttle * abs(params.a_brake)
    speed = min(max(vehicle.speed + accel * dt, 0.0), params.v_max)
    distance = vehicle.distance + speed * dt
    if distance >= path.length - 1e-9:
        distance = path.length
    x, y, heading, seg = path.locate(distance)
    cursor = len(path) - 1 if distance >= path.length else max(vehicle.cursor, seg)
    return VehicleState((x, y), heading, speed, cursor, distance)


def at_goal(vehicle: VehicleState, path: Polyline) -> bool:
    return vehicle.distance >= path.length


# -- ROI grid ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RoiGrid:
    """Three ``ROWS x COLS`` layers: occupancy, relative speed (m/s),
    relative heading (degrees in [0, 360), counter-clockwise from the ego's
    forward axis).

    Footprint cells carry ``EGO`` unless a pedestrian sits in them, in which
    case the pedestrian code wins so the policy still sees it.
    """

    layers: np.ndarray
    n_pedestrian_cells: int = 0

    @property
    def occupancy(self) -> np.ndarray:
        return self.layers[OCCUPANCY]

    @property
    def rel_speed(self) -> np.ndarray:
        return self.layers[REL_SPEED]

    @property
    def rel_heading(self) -> np.ndarray:
        return self.layers[REL_HEADING]

    @property
    def shape(self):
        return self.layers.shape


def _footprint_slices(length=EGO_LENGTH, width=EGO_WIDTH):
    r0 = math.floor((ROI_AHEAD - length / 2) / CELL_LENGTH)
    r1 = math.ceil((ROI_AHEAD + length / 2) / CELL_LENGTH)
    c0 = math.floor((ROI_WIDTH / 2 - width / 2) / CELL_WIDTH)
    c1 = math.ceil((ROI_WIDTH / 2 + width / 2) / CELL_WIDTH)
    return slice(r0, r1), slice(c0, c1)


FOOTPRINT = _footprint_slices()
FRONT_ROW = FOOTPRINT[0].start
# anything farther than this from the ego centre cannot be inside the ROI
ROI_RADIUS = math.hypot(max(ROI_AHEAD, ROI_LENGTH - ROI_AHEAD), ROI_WIDTH / 2) + 1e-6


def _empty_layers():
    layers = np.zeros((3, ROWS, COLS))
    layers[OCCUPANCY][FOOTPRINT] = EGO
    return layers


_EMPTY_LAYERS = _empty_layers()
_EMPTY_LAYERS.flags.writeable = False
EMPTY_GRID = RoiGrid(_EMPTY_LAYERS, 0)


def cell_of(fwd, left):
    """Grid ``(row, col)`` for ego-frame offsets (arrays in, arrays out)."""
    row = np.floor((ROI_AHEAD - np.asarray(fwd)) / CELL_LENGTH).astype(int)
    col = np.floor((ROI_WIDTH / 2 - np.asarray(left)) / CELL_WIDTH).astype(int)
    return row, col


def cell_center(row, col):
    """Ego-frame ``(forward, left)`` of a cell centre."""
    fwd = ROI_AHEAD - (np.asarray(row) + 0.5) * CELL_LENGTH
    left = ROI_WIDTH / 2 - (np.asarray(col) + 0.5) * CELL_WIDTH
    return fwd, left


def build_grid(vehicle: VehicleState, positions, velocities) -> RoiGrid:
    """Rasterise pedestrians into the ego-aligned ROI.

    ``positions`` and ``velocities`` are ``(n, 2)`` world-frame arrays.
    When several pedestrians share a cell the one nearest the ego centre
    supplies the speed and heading values.
    """
    positions = np.ascontiguousarray(positions, dtype=float).reshape(-1, 2)
    if len(positions) == 0:
        return EMPTY_GRID
    # complex view: multiplying by exp(-i heading) maps world offsets to (forward + i left)
    th = math.radians(vehicle.heading)
    rot = complex(math.cos(th), -math.sin(th))
    z = (positions.view(complex)[:, 0] - complex(*vehicle.position)) * rot
    fwd, left = z.real, z.imag
    row = np.floor((ROI_AHEAD - fwd) * (1.0 / CELL_LENGTH)).astype(np.int64)
    col = np.floor((ROI_WIDTH / 2 - left) * (1.0 / CELL_WIDTH)).astype(np.int64)
    # negative indices wrap to huge unsigned values, so one compare per axis
    idx = np.flatnonzero((row.view(np.uint64) < ROWS) & (col.view(np.uint64) < COLS))
    if len(idx) == 0:
        return EMPTY_GRID
    row, col = row[idx], col[idx]

    vel = np.ascontiguousarray(velocities, dtype=float).reshape(-1, 2).view(complex)[idx, 0]
    rel = vel * rot - vehicle.speed
    speed = np.abs(rel)
    heading = np.angle(rel, deg=True) % 360.0
    heading[heading >= 360.0] = 0.0

    if len(idx) > 1:
        # nearest pedestrian first within each cell, then keep the first per cell
        flat = row * COLS + col
        order = np.lexsort((np.abs(z[idx]), flat))
        fs = flat[order]
        keep = np.empty(len(fs), dtype=bool)
        keep[0] = True
        np.not_equal(fs[1:], fs[:-1], out=keep[1:])
        pick = order[keep]
        row, col = row[pick], col[pick]
        speed, heading = speed[pick], heading[pick]

    layers = _EMPTY_LAYERS.copy()
    layers[OCCUPANCY, row, col] = PEDESTRIAN
    layers[REL_SPEED, row, col] = speed
    layers[REL_HEADING, row, col] = heading
    layers.flags.writeable = False
    return RoiGrid(layers, len(row))


def write_grid_csv(grid: RoiGrid, fh) -> None:
    """Debug dump of every cell: ``row, col, occupancy, rel_speed, rel_heading``."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["row", "col", "occupancy", "rel_speed", "rel_heading"])
    for r in range(ROWS):
        for c in range(COLS):
            w.writerow([r, c, int(grid.occupancy[r, c]), repr(float(grid.rel_speed[r, c])), repr(float(grid.rel_heading[r, c]))])


# -- policies ------------------------------------------------------------------

Policy = Callable[[RoiGrid, VehicleState], Action]


def _corridor_cols(params: VehicleParams) -> slice:
    half = params.width / 2 + params.corridor_margin
    c0 = math.floor((ROI_WIDTH / 2 - half) / CELL_WIDTH + 1e-9)
    c1 = math.ceil((ROI_WIDTH / 2 + half) / CELL_WIDTH - 1e-9)
    return slice(c0, c1)


class SafeDefaultPolicy:
    """Deterministic braking-corridor controller.

    The corridor is the ego width plus ``corridor_margin`` on each side,
    running forward from the front bumper.  Within the braking lookahead
    ``max(v^2 / 2|a_brake|, min_lookahead)`` an occupied cell means full
    brake; an occupied corridor cell farther out means decelerate (or
    gentle acceleration when slower than ``creep_speed``).
    Pedestrians whose ground-frame motion would bring them into the braking
    zone within ``horizon`` seconds count as occupying it.  Otherwise the
    policy tracks ``cruise_speed``: ``a3`` below half of it, ``a2`` below
    it, ``a1`` at or above it.
    """

    def __init__(self, params: VehicleParams = VehicleParams()):
        self.params = params
        self.cols = _corridor_cols(params)
        self.half_corridor = params.width / 2 + params.corridor_margin
        self.front = params.length / 2
        n = int(round(params.horizon / 0.1))
        self.times = np.linspace(0.0, params.horizon, n + 1) if n > 0 else np.zeros(1)

    def lookahead(self, speed: float) -> float:
        return max(speed * speed / (2.0 * abs(self.params.a_brake)), self.params.min_lookahead)

    def cruise_action(self, speed: float) -> Action:
        target = self.params.cruise_speed
        if speed < 0.5 * target:
            return Action.ACCELERATE_2
        if speed < target:
            return Action.ACCELERATE_1
        return Action.DECELERATE

    def __call__(self, grid: RoiGrid, vehicle: VehicleState) -> Action:
        if grid.n_pedestrian_cells == 0:
            return self.cruise_action(vehicle.speed)
        look = self.lookahead(vehicle.speed)
        occ = grid.occupancy

        # rows from the ROI front edge down to the row holding the bumper
        ahead = occ[: FRONT_ROW + 1, self.cols] == PEDESTRIAN
        if ahead.any():
            rows = np.flatnonzero(ahead.any(axis=1))
            near_edge = ROI_AHEAD - (rows + 1) * CELL_LENGTH
            gap = np.maximum(near_edge - self.front, 0.0)
            if np.any(gap <= look):
                return Action.FULL_BRAKE

        if self.params.horizon > 0 and self._predicted_incursion(grid, vehicle, look):
            return Action.FULL_BRAKE
        if ahead.any():
            # far obstacle: shed speed, but do not stall below creep speed
            return Action.DECELERATE if vehicle.speed > self.params.creep_speed else Action.ACCELERATE_1
        return self.cruise_action(vehicle.speed)

    def _predicted_incursion(self, grid, vehicle, look) -> bool:
        r, c = np.nonzero(grid.occupancy == PEDESTRIAN)
        fwd, left = cell_center(r, c)
        sp = grid.rel_speed[r, c]
        hd = np.radians(grid.rel_heading[r, c])
        vf = sp * np.cos(hd) + vehicle.speed
        vl = sp * np.sin(hd)
        f = fwd[:, None] + vf[:, None] * self.times
        lt = left[:, None] + vl[:, None] * self.times
        slack = CELL_LENGTH / 2
        hit = (
            (np.abs(lt) <= self.half_corridor + slack)
            & (f >= self.front - slack)
            & (f - self.front <= look + slack)
        )
        return bool(hit.any())


class FullThrottlePolicy:
    """Always ``a3``; ignores the crowd entirely."""

    def __init__(self, params: VehicleParams = VehicleParams()):
        self.params = params

    def __call__(self, grid: RoiGrid, vehicle: VehicleState) -> Action:
        return Action.ACCELERATE_2


POLICIES: dict[str, Callable[[VehicleParams], Policy]] = {
    "safe-default": SafeDefaultPolicy,
    "full-throttle": FullThrottlePolicy,
}


def make_policy(name: str, params: VehicleParams = VehicleParams()) -> Policy:
    try:
        factory = POLICIES[name]
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}") from None
    return factory(params)


def default_policy(grid: RoiGrid, vehicle: VehicleState, params: VehicleParams = VehicleParams()) -> Action:
    return SafeDefaultPolicy(params)(grid, vehicle)

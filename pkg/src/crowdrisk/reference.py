"""The shipped reference town and default accident network.

Three paths join a common start and goal.  Thirteen locations sit beside
them, each with a hand-written activity profile (fraction of its
maximum crowd present) per day and time.  Crowd-size PDFs are binomial in
``max_pedestrians`` with that fraction, written out as explicit
categorical supports.

The accident CPT is a product of per-input factors, so it is monotone in
the pedestrian bin and worse at night and in poor weather.  None of the
numbers are empirical.
"""

from __future__ import annotations

import math

import numpy as np

from .bayes_net import Network, NodeSpec, PedestrianBinning
from .world_sim import DAYS, DEFAULT_WEEKDAY_MAP, CountPdf, Location, Scenario

TIMES = ("07:00", "09:00", "11:00", "13:00", "15:00", "17:00", "19:00")
WEEKDAYS = DAYS[:5]

START = (0.0, 0.0)
GOAL = (160.0, 0.0)
WAYPOINT_SPACING = 10.0

# corner points of each route; waypoints are then laid every 10 m
ROUTES = {
    "A": [START, (0.0, 40.0), (160.0, 40.0), GOAL],
    "B": [START, GOAL],
    "C": [START, (0.0, -40.0), (160.0, -40.0), GOAL],
}

MAX_PEDESTRIANS = {"commercial": 20, "parking": 12, "mall": 30, "tower": 30, "residential": 6, "bazaar": 25}

# (id, kind, anchor on the route, unit road direction, building side: +1 left / -1 right)
LAYOUT = [
    ("L1", "commercial", (30.0, 40.0), (1.0, 0.0), +1),
    ("L2", "commercial", (130.0, 40.0), (1.0, 0.0), +1),
    ("L3", "commercial", (30.0, -40.0), (1.0, 0.0), -1),
    ("L4", "mall", (80.0, 40.0), (1.0, 0.0), +1),
    ("L5", "mall", (80.0, -40.0), (1.0, 0.0), -1),
    ("L6", "residential", (0.0, 30.0), (0.0, 1.0), +1),
    ("L7", "residential", (0.0, -30.0), (0.0, -1.0), -1),
    ("L8", "commercial", (130.0, -40.0), (1.0, 0.0), -1),
    ("L9", "residential", (40.0, 0.0), (1.0, 0.0), +1),
    ("L10", "residential", (120.0, 0.0), (1.0, 0.0), -1),
    ("L11", "bazaar", (160.0, 20.0), (0.0, -1.0), -1),
    ("L12", "parking", (80.0, 0.0), (1.0, 0.0), +1),
    ("L13", "bazaar", (160.0, -20.0), (0.0, 1.0), +1),
]

_SATURDAY_QUIET = [0.03, 0.05, 0.08, 0.08, 0.08, 0.06, 0.05]
_SUNDAY_QUIET = [0.03, 0.05, 0.06, 0.06, 0.06, 0.05, 0.04]

# fraction of the maximum crowd per time slot; keys are kinds, then a day
# or "weekday" fallback
ACTIVITY = {
    "commercial": {
        "weekday": [0.10, 0.55, 0.25, 0.30, 0.25, 0.85, 0.20],
        "Friday": [0.10, 0.55, 0.25, 0.30, 0.25, 0.85, 0.45],
        "Saturday": _SATURDAY_QUIET,
        "Sunday": _SUNDAY_QUIET,
    },
    "mall": {
        "weekday": [0.02, 0.05, 0.12, 0.15, 0.15, 0.22, 0.30],
        "Friday": [0.02, 0.05, 0.12, 0.15, 0.15, 0.22, 0.55],
        "Saturday": [0.02, 0.08, 0.25, 0.30, 0.30, 0.30, 0.75],
        "Sunday": [0.01, 0.03, 0.06, 0.08, 0.08, 0.06, 0.05],
    },
    "residential": {
        "weekday": [0.35, 0.20, 0.08, 0.08, 0.10, 0.30, 0.40],
        "Saturday": [0.05, 0.10, 0.15, 0.15, 0.15, 0.15, 0.20],
        "Sunday": [0.03, 0.05, 0.06, 0.06, 0.06, 0.06, 0.06],
    },
    "bazaar": {
        "weekday": [0.02, 0.05, 0.10, 0.12, 0.10, 0.08, 0.05],
        "Saturday": [0.05, 0.20, 0.45, 0.50, 0.45, 0.30, 0.10],
        # early Sunday market
        "Sunday": [0.45, 0.30, 0.10, 0.06, 0.04, 0.03, 0.03],
    },
}
ACTIVITY["parking"] = ACTIVITY["commercial"]
ACTIVITY["tower"] = ACTIVITY["mall"]

NIGHT = {t: t == "19:00" for t in TIMES}
WEATHER_EXCEPTIONS = {
    ("Tuesday", "11:00"): "rain",
    ("Wednesday", "07:00"): "fog",
    ("Thursday", "15:00"): "cloudy",
    ("Saturday", "09:00"): "rain",
    ("Sunday", "13:00"): "cloudy",
}

PDF_TAIL = 1e-4


def route_waypoints(corners, spacing=WAYPOINT_SPACING) -> np.ndarray:
    pts = [corners[0]]
    for a, b in zip(corners[:-1], corners[1:]):
        a, b = np.asarray(a), np.asarray(b)
        n = max(1, int(math.ceil(np.hypot(*(b - a)) / spacing)))
        for k in range(1, n + 1):
            pts.append(tuple(a + (b - a) * k / n))
    return np.array(pts, dtype=float)


def spawn_lattice(anchor, direction, side) -> np.ndarray:
    """Sidewalk points around an anchor: 12 on the building side, 1 across the road."""
    a = np.asarray(anchor, dtype=float)
    u = np.asarray(direction, dtype=float)
    n = np.array([-u[1], u[0]]) * side
    pts = []
    for s in (-9.0, -3.0, 3.0, 9.0):
        for off in (4.0, 6.0, 8.0):
            pts.append(a + s * u + off * n)
    pts.append(a - 4.5 * n)
    return np.round(np.array(pts), 6)


def activity(kind: str, day: str, time: str) -> float:
    table = ACTIVITY[kind]
    row = table.get(day) or table["weekday"]
    return row[TIMES.index(time)]


def binomial_pdf(n: int, p: float, tail: float = PDF_TAIL) -> CountPdf:
    """Binomial(n, p) with entries below ``tail`` dropped and weights rounded to 1e-6."""
    pmf = np.array([math.comb(n, k) * p**k * (1 - p) ** (n - k) for k in range(n + 1)])
    ks = np.flatnonzero(pmf >= tail)
    weights = np.round(pmf[ks] / pmf[ks].sum(), 6)
    # the largest entry absorbs the rounding slack
    weights[np.argmax(weights)] += 1.0 - weights.sum()
    return CountPdf(tuple((int(k), float(w)) for k, w in zip(ks, weights)))


def reference_scenario() -> Scenario:
    locations = []
    for loc_id, kind, anchor, direction, side in LAYOUT:
        pts = spawn_lattice(anchor, direction, side)
        center = tuple(np.round(pts[:12].mean(axis=0), 6))
        locations.append(Location(loc_id, center, kind, pts, MAX_PEDESTRIANS[kind]))
    pdfs = {}
    for loc in locations:
        for d in DAYS:
            for t in TIMES:
                pdfs[(loc.id, d, t)] = binomial_pdf(loc.max_pedestrians, activity(loc.kind, d, t))
    weather = {(d, t): WEATHER_EXCEPTIONS.get((d, t), "clear") for d in DAYS for t in TIMES}
    return Scenario(
        locations=tuple(locations),
        paths={k: route_waypoints(v) for k, v in ROUTES.items()},
        days=DAYS,
        times=TIMES,
        crowd_pdfs=pdfs,
        night_map=dict(NIGHT),
        weather_map=weather,
        binning=PedestrianBinning(),
        weekday_map=dict(DEFAULT_WEEKDAY_MAP),
    )


# -- default network ---------------------------------------------------------------

PED_BASE = (0.0005, 0.002, 0.006, 0.015)
NIGHT_FACTOR = {"false": 1.0, "true": 1.8}
WEEKDAY_FACTOR = {"mon-thu": 1.0, "fri": 1.1, "sat": 1.05, "sun": 0.9}
WEATHER_FACTOR = {"clear": 1.0, "cloudy": 1.2, "rain": 1.8, "fog": 2.2}


def default_network(binning: PedestrianBinning = PedestrianBinning()) -> Network:
    ped = NodeSpec("NumPedestrians", binning.labels, (), ((0.4, 0.3, 0.2, 0.1),))
    night = NodeSpec("Night", ("false", "true"), (), ((0.7, 0.3),))
    weekday = NodeSpec("Weekday", tuple(WEEKDAY_FACTOR), (), ((0.58, 0.14, 0.14, 0.14),))
    weather = NodeSpec("Weather", tuple(WEATHER_FACTOR), (), ((0.6, 0.2, 0.15, 0.05),))
    rows = []
    for b in PED_BASE:
        for nf in NIGHT_FACTOR.values():
            for wf in WEEKDAY_FACTOR.values():
                for ef in WEATHER_FACTOR.values():
                    p = round(b * nf * wf * ef, 6)
                    rows.append((p, round(1.0 - p, 6)))
    accident = NodeSpec("Accident", ("true", "false"), ("NumPedestrians", "Night", "Weekday", "Weather"), tuple(rows))
    return Network((ped, night, weekday, weather, accident), "Accident")


def reference_manifest_dict() -> dict:
    return {
        "scenario": "reference_scenario.json",
        "network": "default_network.json",
        "loss": {"w1": 10_000_000.0},
        "simulation": {"tick_rate": 15, "radius": 20.0, "step_cap_factor": 10.0},
        "runs": 100,
        "seed": 0,
        "policy": "safe-default",
        "experiment": "which_path",
    }


def write_reference_data(directory) -> None:
    """Regenerate the shipped JSON files from the definitions above."""
    from pathlib import Path

    from .config_io import save_network, save_scenario, write_json

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_scenario(reference_scenario(), d / "reference_scenario.json")
    save_network(default_network(), d / "default_network.json")
    write_json(reference_manifest_dict(), d / "reference_manifest.json")


if __name__ == "__main__":
    import sys

    from pathlib import Path

    write_reference_data(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parent / "data")

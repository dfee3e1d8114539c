"""JSON configuration files and CSV/JSON report output.

Three documents describe a study:

* a scenario (locations, paths, crowd PDFs, night and weather maps),
* an accident network (see :func:`crowdrisk.bayes_net.network_from_dict`),
* a manifest binding the two with loss, vehicle, simulation and
  experiment parameters.  Relative file names in a manifest resolve
  against the manifest's own directory.

Loading never returns a half-built object: every problem found is
collected into one :class:`ConfigError`.
"""

from __future__ import annotations

import csv
import json
import math
import platform
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import __version__
from .bayes_net import INPUT_NODES, Network, PedestrianBinning, network_from_dict, network_to_dict, validate
from .controller import POLICIES, VehicleParams
from .experiments import KINDS, ExperimentReport, Spike, write_report_csv, write_spikes_csv
from .risk_engine import LossParams, RiskResult, RiskTable
from .world_sim import (
    DEFAULT_WEEKDAY_MAP,
    LOCATION_KINDS,
    CountPdf,
    Location,
    Scenario,
    SimParams,
    Traversal,
    TraversalTrace,
    write_trace_csv,
)

DATA_DIR = resources.files("crowdrisk") / "data"
REFERENCE_MANIFEST = "reference_manifest.json"
REFERENCE_SCENARIO = "reference_scenario.json"
DEFAULT_NETWORK = "default_network.json"


class ConfigError(ValueError):
    """One or more configuration problems; ``problems`` lists them all."""

    def __init__(self, problems: Sequence[str], source: str | None = None):
        self.problems = list(problems)
        self.source = source
        head = f"{source}: " if source else ""
        super().__init__(head + "; ".join(self.problems))


def data_path(name: str) -> Path:
    """Filesystem path of a file shipped in the package's data directory."""
    return Path(str(DATA_DIR / name))


def read_json(path) -> Any:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read file: {exc.strerror or exc}"], str(path)) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"line {exc.lineno}, column {exc.colno}: {exc.msg}"], str(path)) from None


def write_json(doc, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n", encoding="utf-8")


# -- scenario ----------------------------------------------------------------------


def _key(*parts: str) -> str:
    return "/".join(parts)


def scenario_to_dict(scn: Scenario) -> dict:
    return {
        "days": list(scn.days),
        "times": list(scn.times),
        "locations": [
            {
                "id": loc.id,
                "kind": loc.kind,
                "position": [float(loc.position[0]), float(loc.position[1])],
                "max_pedestrians": int(loc.max_pedestrians),
                "spawn_points": loc.spawn_points.tolist(),
            }
            for loc in scn.locations
        ],
        "paths": {k: np.asarray(v, dtype=float).tolist() for k, v in sorted(scn.paths.items())},
        "crowd_pdfs": {
            _key(loc.id, d, t): [[c, w] for c, w in scn.crowd_pdfs[(loc.id, d, t)].support]
            for loc in scn.locations
            for d in scn.days
            for t in scn.times
            if (loc.id, d, t) in scn.crowd_pdfs
        },
        "night_map": {t: bool(scn.night_map[t]) for t in scn.times if t in scn.night_map},
        "weather_map": {_key(d, t): scn.weather_map[(d, t)] for d in scn.days for t in scn.times if (d, t) in scn.weather_map},
        "weekday_map": dict(scn.weekday_map),
        "binning": {"thresholds": list(scn.binning.thresholds), "labels": list(scn.binning.labels)},
    }


def _require(doc: Mapping, name: str, kind, problems: list[str], where: str):
    if name not in doc:
        problems.append(f"{where}: missing field {name!r}")
        return None
    value = doc[name]
    if not isinstance(value, kind):
        problems.append(f"{where}.{name}: expected {getattr(kind, '__name__', kind)}")
        return None
    return value


def _is_point(p) -> bool:
    return (
        isinstance(p, (list, tuple))
        and len(p) == 2
        and all(isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x) for x in p)
    )


def scenario_from_dict(doc) -> Scenario:
    """Parse and validate a scenario document; raises :class:`ConfigError`."""
    problems: list[str] = []
    if not isinstance(doc, Mapping):
        raise ConfigError(["scenario must be a JSON object"])
    days = _require(doc, "days", list, problems, "scenario")
    times = _require(doc, "times", list, problems, "scenario")
    raw_locs = _require(doc, "locations", list, problems, "scenario")
    raw_paths = _require(doc, "paths", dict, problems, "scenario")
    raw_pdfs = _require(doc, "crowd_pdfs", dict, problems, "scenario")
    raw_night = _require(doc, "night_map", dict, problems, "scenario")
    raw_weather = _require(doc, "weather_map", dict, problems, "scenario")
    weekday_map = doc.get("weekday_map", dict(DEFAULT_WEEKDAY_MAP))
    if problems:
        raise ConfigError(problems)

    locations = []
    for k, d in enumerate(raw_locs):
        where = f"locations[{k}]"
        if not isinstance(d, Mapping):
            problems.append(f"{where}: expected an object")
            continue
        loc_id = _require(d, "id", str, problems, where)
        kind = _require(d, "kind", str, problems, where)
        pos = d.get("position")
        pts = _require(d, "spawn_points", list, problems, where)
        cap = _require(d, "max_pedestrians", int, problems, where)
        if not _is_point(pos):
            problems.append(f"{where}.position: expected [x, y]")
        if pts is not None and not all(_is_point(p) for p in pts):
            problems.append(f"{where}.spawn_points: expected a list of [x, y]")
            pts = None
        if None in (loc_id, kind, pts, cap) or not _is_point(pos):
            continue
        locations.append(Location(loc_id, (float(pos[0]), float(pos[1])), kind, np.array(pts, dtype=float).reshape(-1, 2), cap))

    paths = {}
    for pid, wps in raw_paths.items():
        if not isinstance(wps, list) or not all(_is_point(p) for p in wps):
            problems.append(f"paths.{pid}: expected a list of [x, y] waypoints")
            continue
        paths[pid] = np.array(wps, dtype=float).reshape(-1, 2)

    pdfs = {}
    for key, support in raw_pdfs.items():
        parts = key.split("/")
        if len(parts) != 3:
            problems.append(f"crowd_pdfs: key {key!r} is not LOCATION/DAY/TIME")
            continue
        ok = isinstance(support, list) and all(
            isinstance(e, list) and len(e) == 2 and isinstance(e[0], int) and isinstance(e[1], (int, float)) for e in support
        )
        if not ok:
            problems.append(f"crowd_pdfs[{key}]: expected a list of [count, weight] pairs")
            continue
        pdfs[tuple(parts)] = CountPdf(tuple((c, w) for c, w in support))

    weather = {}
    for key, state in raw_weather.items():
        parts = key.split("/")
        if len(parts) != 2 or not isinstance(state, str):
            problems.append(f"weather_map: entry {key!r} must map DAY/TIME to a state name")
            continue
        weather[tuple(parts)] = state

    night = {}
    for t, flag in raw_night.items():
        if not isinstance(flag, bool):
            problems.append(f"night_map[{t}]: expected true or false")
            continue
        night[t] = flag

    binning = PedestrianBinning()
    if "binning" in doc:
        b = doc["binning"]
        try:
            binning = PedestrianBinning(tuple(b["thresholds"]), tuple(b["labels"]) if b.get("labels") else None)
        except (KeyError, TypeError, ValueError) as exc:
            problems.append(f"binning: {exc}")

    if problems:
        raise ConfigError(problems)
    if not isinstance(weekday_map, Mapping):
        raise ConfigError(["weekday_map: expected an object"])
    try:
        scn = Scenario(tuple(locations), paths, tuple(days), tuple(times), pdfs, night, weather, binning, dict(weekday_map))
    except ValueError as exc:
        raise ConfigError([f"paths: {exc}"]) from None
    problems = validate_scenario(scn)
    if problems:
        raise ConfigError(problems)
    return scn


def validate_scenario(scn: Scenario, net: Network | None = None) -> list[str]:
    """Every problem with a scenario, optionally checked against a network's states."""
    out = []
    if not scn.days:
        out.append("days: empty")
    if not scn.times:
        out.append("times: empty")
    if len(set(scn.days)) != len(scn.days):
        out.append("days: duplicates")
    if len(set(scn.times)) != len(scn.times):
        out.append("times: duplicates")
    if not scn.paths:
        out.append("paths: none defined")
    ids = [loc.id for loc in scn.locations]
    if len(set(ids)) != len(ids):
        out.append("locations: duplicate ids")
    for loc in scn.locations:
        if loc.kind not in LOCATION_KINDS:
            out.append(f"location {loc.id}: unknown kind {loc.kind!r}")
        if len(loc.spawn_points) == 0:
            out.append(f"location {loc.id}: no spawn points")
        if loc.max_pedestrians < 0:
            out.append(f"location {loc.id}: max_pedestrians must be >= 0")
        for d in scn.days:
            for t in scn.times:
                pdf = scn.crowd_pdfs.get((loc.id, d, t))
                if pdf is None:
                    out.append(f"crowd_pdfs: missing {_key(loc.id, d, t)}")
                    continue
                out.extend(f"crowd_pdfs[{_key(loc.id, d, t)}]: {p}" for p in pdf.problems())
                if pdf.support and pdf.max_count > loc.max_pedestrians:
                    out.append(f"crowd_pdfs[{_key(loc.id, d, t)}]: count {pdf.max_count} exceeds max_pedestrians {loc.max_pedestrians}")
    known = set(ids)
    for loc_id, d, t in scn.crowd_pdfs:
        if loc_id not in known or d not in scn.days or t not in scn.times:
            out.append(f"crowd_pdfs: {_key(loc_id, d, t)} does not name a known location/day/time")
    for t in scn.times:
        if t not in scn.night_map:
            out.append(f"night_map: missing {t}")
    for d in scn.days:
        if d not in scn.weekday_map:
            out.append(f"weekday_map: missing {d}")
        for t in scn.times:
            if (d, t) not in scn.weather_map:
                out.append(f"weather_map: missing {_key(d, t)}")
    if net is not None:
        out.extend(_evidence_vocabulary(scn, net))
    return out


def _evidence_vocabulary(scn: Scenario, net: Network) -> list[str]:
    out = []
    names = set(net.names)
    missing = [n for n in INPUT_NODES if n not in names]
    if missing:
        return [f"network lacks input nodes {missing}"]
    states = {n: set(net.node(n).states) for n in INPUT_NODES}
    if tuple(net.node("NumPedestrians").states) != tuple(scn.binning.labels):
        out.append(f"NumPedestrians states {list(net.node('NumPedestrians').states)} differ from bin labels {list(scn.binning.labels)}")
    if not {"true", "false"} <= states["Night"]:
        out.append("Night node needs states 'true' and 'false'")
    for d, g in scn.weekday_map.items():
        if g not in states["Weekday"]:
            out.append(f"weekday_map[{d}] = {g!r} is not a Weekday state")
    for (d, t), w in scn.weather_map.items():
        if w not in states["Weather"]:
            out.append(f"weather_map[{_key(d, t)}] = {w!r} is not a Weather state")
    return out


def load_scenario(path) -> Scenario:
    doc = read_json(path)
    try:
        return scenario_from_dict(doc)
    except ConfigError as exc:
        raise ConfigError(exc.problems, str(path)) from None


def save_scenario(scn: Scenario, path) -> None:
    write_json(scenario_to_dict(scn), path)


# -- network -----------------------------------------------------------------------


def load_network(path) -> Network:
    doc = read_json(path)
    if not isinstance(doc, Mapping) or "nodes" not in doc or "target" not in doc:
        raise ConfigError(["network must be an object with 'nodes' and 'target'"], str(path))
    try:
        net = network_from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError([f"malformed network: {exc}"], str(path)) from None
    problems = validate(net)
    if problems:
        raise ConfigError(problems, str(path))
    return net


def save_network(net: Network, path) -> None:
    write_json(network_to_dict(net), path)


# -- manifest ----------------------------------------------------------------------


@dataclass(frozen=True)
class Manifest:
    """Everything needed to reproduce a study from one file and a seed."""

    scenario_path: Path
    network_path: Path
    scenario: Scenario = field(compare=False, repr=False)
    network: Network = field(compare=False, repr=False)
    loss: LossParams = LossParams()
    vehicle: VehicleParams = VehicleParams()
    sim: SimParams = SimParams()
    runs: int = 100
    seed: int = 0
    policy: str = "safe-default"
    experiment: str = "which_path"


_SECTIONS = {
    "loss": LossParams,
    "vehicle": VehicleParams,
    "simulation": SimParams,
}
_TOP_LEVEL = {"scenario", "network", "loss", "vehicle", "simulation", "runs", "seed", "policy", "experiment"}


def _number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _section(doc: Mapping, name: str, problems: list[str]):
    cls = _SECTIONS[name]
    raw = doc.get(name, {})
    if not isinstance(raw, Mapping):
        problems.append(f"{name}: expected an object")
        return cls()
    allowed = {f.name: f for f in fields(cls)}
    kwargs = {}
    for k, v in raw.items():
        if k not in allowed:
            problems.append(f"{name}.{k}: unknown field")
        elif not _number(v):
            problems.append(f"{name}.{k}: expected a number")
        else:
            kwargs[k] = v
    if name == "simulation" and "tick_rate" in kwargs and kwargs["tick_rate"] != int(kwargs["tick_rate"]):
        problems.append("simulation.tick_rate: expected an integer")
    if name == "simulation" and "tick_rate" in kwargs:
        kwargs["tick_rate"] = int(kwargs["tick_rate"])
    try:
        return cls(**kwargs)
    except ValueError as exc:
        problems.append(f"{name}: {exc}")
        return cls()


def manifest_from_dict(doc, base_dir: Path | str = ".") -> Manifest:
    base_dir = Path(base_dir)
    if not isinstance(doc, Mapping):
        raise ConfigError(["manifest must be a JSON object"])
    problems = [f"{k}: unknown field" for k in doc if k not in _TOP_LEVEL]
    for k in ("scenario", "network"):
        if not isinstance(doc.get(k), str):
            problems.append(f"{k}: expected a file name")

    loss = _section(doc, "loss", problems)
    vehicle = _section(doc, "vehicle", problems)
    sim = _section(doc, "simulation", problems)
    runs = doc.get("runs", 100)
    seed = doc.get("seed", 0)
    policy = doc.get("policy", "safe-default")
    experiment = doc.get("experiment", "which_path")

    if not isinstance(runs, int) or isinstance(runs, bool) or runs < 1:
        problems.append("runs ≥ 1 required")
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        problems.append("seed: expected an unsigned 64-bit integer")
    if policy not in POLICIES:
        problems.append(f"policy: unknown {policy!r}; choose from {sorted(POLICIES)}")
    if experiment not in KINDS:
        problems.append(f"experiment: unknown {experiment!r}; choose from {list(KINDS)}")
    problems.extend(f"vehicle: {p}" for p in vehicle.problems())
    if not sim.radius > 0:
        problems.append("simulation.radius must be > 0")
    if not sim.tick_rate > 0:
        problems.append("simulation.tick_rate must be > 0")
    if not sim.step_cap_factor >= 1:
        problems.append("simulation.step_cap_factor must be >= 1")

    scn = net = None
    scn_path = net_path = None
    if isinstance(doc.get("scenario"), str):
        scn_path = (base_dir / doc["scenario"]).resolve()
        try:
            scn = load_scenario(scn_path)
        except ConfigError as exc:
            problems.extend(f"scenario {scn_path.name}: {p}" for p in exc.problems)
    if isinstance(doc.get("network"), str):
        net_path = (base_dir / doc["network"]).resolve()
        try:
            net = load_network(net_path)
        except ConfigError as exc:
            problems.extend(f"network {net_path.name}: {p}" for p in exc.problems)
    if scn is not None and net is not None:
        problems.extend(_evidence_vocabulary(scn, net))
    if problems:
        raise ConfigError(problems)
    return Manifest(scn_path, net_path, scn, net, loss, vehicle, sim, runs, seed, policy, experiment)


def load_manifest(path) -> Manifest:
    path = Path(path)
    doc = read_json(path)
    try:
        return manifest_from_dict(doc, path.parent)
    except ConfigError as exc:
        raise ConfigError(exc.problems, str(path)) from None


def manifest_to_dict(m: Manifest, base_dir: Path | str | None = None) -> dict:
    """JSON form; file paths are written relative to ``base_dir`` when possible."""

    def rel(p: Path) -> str:
        if base_dir is not None:
            try:
                return str(Path(p).resolve().relative_to(Path(base_dir).resolve()))
            except ValueError:
                pass
        return str(p)

    return {
        "scenario": rel(m.scenario_path),
        "network": rel(m.network_path),
        "loss": asdict(m.loss),
        "vehicle": asdict(m.vehicle),
        "simulation": asdict(m.sim),
        "runs": m.runs,
        "seed": m.seed,
        "policy": m.policy,
        "experiment": m.experiment,
    }


def save_manifest(m: Manifest, path) -> None:
    path = Path(path)
    write_json(manifest_to_dict(m, path.parent), path)


def reference_manifest() -> Manifest:
    return load_manifest(data_path(REFERENCE_MANIFEST))


# -- reports -----------------------------------------------------------------------

RISK_COLUMNS = ("path", "day", "time", "runs", "mean_risk", "std", "stderr", "normalized_risk", "collisions")


@dataclass
class ReportSet:
    """Whatever a command produced; ``None``/empty members are skipped on output."""

    table: RiskTable | None = None
    experiments: Sequence[ExperimentReport] = ()
    spikes: Sequence[Spike] | None = None
    traces: Sequence[TraversalTrace] = ()
    metadata: Mapping[str, Any] = field(default_factory=dict)


def write_risk_table_csv(table: RiskTable, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(RISK_COLUMNS)
    for key in table.keys():
        r = table.cells.get(key)
        if r is None:
            continue
        norm = table.normalized.get(key)
        w.writerow([*key, r.runs, repr(r.mean), repr(r.std), repr(r.stderr), "" if norm is None else repr(norm), r.collisions])


def write_normalized_csv(table: RiskTable, fh) -> None:
    """Wide form: one row per (day, time), one column per path; columns sum to 1."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["day", "time", *table.paths])
    for d in table.days:
        for t in table.times:
            w.writerow([d, t, *(repr(table.normalized[(p, d, t)]) for p in table.paths)])


def read_risk_table(path) -> RiskTable:
    """Rebuild a table of means from ``risk_table.csv`` (per-step detail is not kept)."""
    from .risk_engine import DegenerateNormalization, normalize

    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read file: {exc.strerror or exc}"], str(path)) from None
    cells = {}
    paths, days, times = [], [], []
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"path", "day", "time", "mean_risk"} <= set(reader.fieldnames):
            raise ConfigError(["not a risk table: missing columns"], str(path))
        for lineno, row in enumerate(reader, start=2):
            key = (row["path"], row["day"], row["time"])
            try:
                mean = float(row["mean_risk"])
                runs = int(row.get("runs") or 1)
                std = float(row.get("std") or 0.0)
                se = float(row.get("stderr") or 0.0)
                col = int(row.get("collisions") or 0)
            except ValueError as exc:
                raise ConfigError([f"line {lineno}: {exc}"], str(path)) from None
            for seq, v in zip((paths, days, times), key):
                if v not in seq:
                    seq.append(v)
            cells[key] = RiskResult(Traversal(*key), (mean,), mean, runs, mean, std, se, (), col)
    table = RiskTable(tuple(sorted(paths)), tuple(days), tuple(times), cells)
    if table.missing():
        return table
    try:
        return normalize(table)
    except DegenerateNormalization:
        return table


def run_metadata(manifest: Manifest | None = None, **extra) -> dict:
    """Seeds, versions and a parameter snapshot; nothing time-dependent."""
    meta: dict[str, Any] = {
        "versions": {"crowdrisk": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }
    if manifest is not None:
        snap = manifest_to_dict(manifest)
        snap["scenario"] = Path(snap["scenario"]).name
        snap["network"] = Path(snap["network"]).name
        meta["manifest"] = snap
    meta.update(extra)
    return meta


def emit_reports(results: ReportSet, out_dir) -> list[Path]:
    """Write every non-empty part of ``results`` to ``out_dir``; returns the files written."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"{out}: {exc.strerror or exc}") from exc
    written = []

    def emit(name, writer, obj):
        p = out / name
        try:
            with p.open("w", newline="", encoding="utf-8") as fh:
                writer(obj, fh)
        except OSError as exc:
            raise OSError(f"{p}: {exc.strerror or exc}") from exc
        written.append(p)

    if results.table is not None:
        emit("risk_table.csv", write_risk_table_csv, results.table)
        if results.table.normalized:
            emit("normalized_risk.csv", write_normalized_csv, results.table)
    for rep in results.experiments:
        emit(f"experiment_{rep.kind}.csv", write_report_csv, rep)
    if results.spikes is not None:
        emit("spikes.csv", write_spikes_csv, results.spikes)
    if results.traces:
        emit("trace.csv", write_trace_csv, list(results.traces))
    meta = dict(results.metadata)
    meta["files"] = [p.name for p in written]
    p = out / "metadata.json"
    try:
        write_json(meta, p)
    except OSError as exc:
        raise OSError(f"{p}: {exc.strerror or exc}") from exc
    written.append(p)
    return written

import csv
import io
import json
import shutil
from dataclasses import replace

import numpy as np
import pytest

from crowdrisk.config_io import (
    DEFAULT_NETWORK,
    REFERENCE_SCENARIO,
    ConfigError,
    ReportSet,
    data_path,
    emit_reports,
    load_manifest,
    load_network,
    load_scenario,
    manifest_from_dict,
    read_json,
    read_risk_table,
    reference_manifest,
    run_metadata,
    save_manifest,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
    validate_scenario,
    write_json,
    write_normalized_csv,
)
from crowdrisk.controller import VehicleParams
from crowdrisk.experiments import spike_report, which_path
from crowdrisk.reference import default_network, reference_scenario
from crowdrisk.risk_engine import LossParams, RiskJob, loss, normalize
from crowdrisk.world_sim import SimParams

from builders import scenario, table_from_array


@pytest.fixture
def workdir(tmp_path):
    for name in (REFERENCE_SCENARIO, DEFAULT_NETWORK):
        shutil.copy(data_path(name), tmp_path / name)
    return tmp_path


def write_manifest(directory, **fields):
    doc = {"scenario": REFERENCE_SCENARIO, "network": DEFAULT_NETWORK, **fields}
    p = directory / "manifest.json"
    p.write_text(json.dumps(doc))
    return p


def problems_of(exc_info):
    return exc_info.value.problems


# -- manifests ------------------------------------------------------------------


def test_minimal_manifest_gets_defaults(workdir):
    m = load_manifest(write_manifest(workdir))
    assert m.loss == LossParams(10_000_000.0)
    assert m.sim == SimParams(15, 20.0, 10.0)
    assert (m.runs, m.seed, m.policy, m.experiment) == (100, 0, "safe-default", "which_path")
    assert m.vehicle == VehicleParams()
    assert len(m.scenario.traversals()) == 147
    assert m.scenario_path == (workdir / REFERENCE_SCENARIO).resolve()


def test_shipped_manifest_loads():
    m = reference_manifest()
    assert m.runs == 100 and m.network.target == "Accident"


def test_zero_runs_is_rejected(workdir):
    with pytest.raises(ConfigError) as info:
        load_manifest(write_manifest(workdir, runs=0))
    assert "runs ≥ 1 required" in problems_of(info)
    assert str(workdir / "manifest.json") in str(info.value)


def test_w1_override_reaches_the_loss(workdir):
    m = load_manifest(write_manifest(workdir, loss={"w1": 5e6}))
    assert loss(1, m.loss) == 5_000_000.0
    assert RiskJob(m.scenario, m.network, m.policy, m.loss).loss.w1 == 5e6


def test_every_problem_is_listed(workdir):
    with pytest.raises(ConfigError) as info:
        load_manifest(
            write_manifest(
                workdir,
                runs=-2,
                seed=-1,
                policy="ddqn",
                colour="blue",
                loss={"w1": -3},
                simulation={"radius": 0, "tick_rate": 2.5},
                vehicle={"cruise_speed": 20.0, "wheels": 4},
            )
        )
    text = "\n".join(problems_of(info))
    for fragment in ("runs", "seed", "policy", "colour", "w1", "radius", "tick_rate", "cruise_speed", "wheels"):
        assert fragment in text, fragment
    assert len(problems_of(info)) >= 9


def test_missing_files_are_reported(workdir):
    p = workdir / "manifest.json"
    p.write_text(json.dumps({"scenario": "nope.json", "network": "also_nope.json"}))
    with pytest.raises(ConfigError) as info:
        load_manifest(p)
    assert any("nope.json" in q for q in problems_of(info))
    assert any("also_nope.json" in q for q in problems_of(info))


def test_parse_error_has_line_and_column(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "runs": 3,\n  "seed": ,\n}')
    with pytest.raises(ConfigError) as info:
        read_json(p)
    assert problems_of(info)[0].startswith("line 3, column 11")


def test_manifest_round_trip(workdir):
    m = load_manifest(write_manifest(workdir, runs=7, seed=123, loss={"w1": 2e6}, vehicle={"cruise_speed": 6.0}))
    out = workdir / "sub"
    out.mkdir()
    shutil.copy(workdir / REFERENCE_SCENARIO, out / REFERENCE_SCENARIO)
    shutil.copy(workdir / DEFAULT_NETWORK, out / DEFAULT_NETWORK)
    moved = replace(m, scenario_path=out / REFERENCE_SCENARIO, network_path=out / DEFAULT_NETWORK)
    save_manifest(moved, out / "m.json")
    doc = json.loads((out / "m.json").read_text())
    assert doc["scenario"] == REFERENCE_SCENARIO
    again = load_manifest(out / "m.json")
    assert again == moved


def test_manifest_must_be_an_object():
    with pytest.raises(ConfigError):
        manifest_from_dict([1, 2, 3])


# -- scenarios and networks ----------------------------------------------------------


def test_scenario_round_trip(tmp_path):
    scn = reference_scenario()
    save_scenario(scn, tmp_path / "s.json")
    again = load_scenario(tmp_path / "s.json")
    assert scenario_to_dict(again) == scenario_to_dict(scn)
    assert validate_scenario(again, default_network()) == []


def test_shipped_files_match_the_generators():
    assert read_json(data_path(REFERENCE_SCENARIO)) == scenario_to_dict(reference_scenario())
    assert load_network(data_path(DEFAULT_NETWORK)) == default_network()


def test_scenario_problems_are_collected():
    doc = scenario_to_dict(scenario())
    doc["crowd_pdfs"]["L1/Monday/12:00"] = [[0, 0.5], [30, 0.4]]
    del doc["crowd_pdfs"]["L1/Tuesday/12:00"]
    doc["weather_map"]["Sunday/12:00"] = "snow"
    doc["locations"][0]["kind"] = "castle"
    with pytest.raises(ConfigError) as info:
        scenario_from_dict(doc)
    text = "\n".join(problems_of(info))
    for fragment in ("sum to 1", "exceeds max_pedestrians", "missing L1/Tuesday/12:00", "castle"):
        assert fragment in text, fragment
    scn = scenario_from_dict(scenario_to_dict(scenario(weather="snow")))
    assert any("snow" in p for p in validate_scenario(scn, default_network()))


@pytest.mark.parametrize(
    "mutate, fragment",
    [
        (lambda d: d.pop("paths"), "missing field 'paths'"),
        (lambda d: d["paths"].update(S=[[0, 0]]), "paths"),
        (lambda d: d["crowd_pdfs"].update({"L1-Monday": [[0, 1.0]]}), "LOCATION/DAY/TIME"),
        (lambda d: d["night_map"].update({"12:00": "yes"}), "true or false"),
        (lambda d: d["locations"][0].update(spawn_points=[[1, 2, 3]]), "spawn_points"),
    ],
)
def test_malformed_scenarios(mutate, fragment):
    doc = scenario_to_dict(scenario())
    mutate(doc)
    with pytest.raises(ConfigError) as info:
        scenario_from_dict(doc)
    assert any(fragment in p for p in problems_of(info)), problems_of(info)


def test_invalid_network_file(tmp_path):
    doc = json.loads(data_path(DEFAULT_NETWORK).read_text())
    doc["nodes"][0]["cpt"] = [0.5, 0.5, 0.5, 0.5]
    write_json(doc, tmp_path / "n.json")
    with pytest.raises(ConfigError) as info:
        load_network(tmp_path / "n.json")
    assert any("row sum" in p for p in problems_of(info))


# -- reports ------------------------------------------------------------------------


def test_empty_report_set_writes_metadata_only(tmp_path):
    written = emit_reports(ReportSet(), tmp_path / "out")
    assert [p.name for p in written] == ["metadata.json"]
    assert json.loads((tmp_path / "out" / "metadata.json").read_text())["files"] == []


def test_full_report_set(tmp_path):
    table = normalize(table_from_array(np.random.default_rng(0).uniform(1, 2, (3, 7, 7))))
    rs = ReportSet(table=table, experiments=[which_path(table)], spikes=spike_report(table), metadata=run_metadata(reference_manifest(), base_seed=0))
    names = [p.name for p in emit_reports(rs, tmp_path)]
    assert names == ["risk_table.csv", "normalized_risk.csv", "experiment_which_path.csv", "spikes.csv", "metadata.json"]
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["manifest"]["scenario"] == REFERENCE_SCENARIO
    assert set(meta["versions"]) == {"crowdrisk", "numpy", "python"}
    again = read_risk_table(tmp_path / "risk_table.csv")
    for k in table.keys():
        assert again.mean(*k) == table.mean(*k)
        assert again.normalized[k] == table.normalized[k]


def test_normalized_columns_sum_to_one():
    table = normalize(table_from_array(np.random.default_rng(1).lognormal(0, 2, (3, 7, 7))))
    buf = io.StringIO()
    write_normalized_csv(table, buf)
    rows = list(csv.DictReader(io.StringIO(buf.getvalue())))
    assert len(rows) == 49
    for p in table.paths:
        assert sum(float(r[p]) for r in rows) == pytest.approx(1.0, abs=1e-9)


def test_reports_are_byte_identical(tmp_path):
    table = normalize(table_from_array(np.random.default_rng(2).uniform(1, 2, (3, 7, 7))))
    for d in ("a", "b"):
        emit_reports(ReportSet(table=table, metadata=run_metadata(reference_manifest())), tmp_path / d)
    for name in ("risk_table.csv", "normalized_risk.csv", "metadata.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_read_risk_table_errors(tmp_path):
    with pytest.raises(ConfigError):
        read_risk_table(tmp_path / "missing.csv")
    (tmp_path / "x.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ConfigError, match="missing columns"):
        read_risk_table(tmp_path / "x.csv")
    (tmp_path / "y.csv").write_text("path,day,time,mean_risk\nA,Monday,07:00,lots\n")
    with pytest.raises(ConfigError, match="line 2"):
        read_risk_table(tmp_path / "y.csv")


def test_unwritable_output_names_the_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError, match="file"):
        emit_reports(ReportSet(), blocker / "out")

import csv
import json

import numpy as np
import pytest

from crowdrisk.cli import EXIT_COLLISION, EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, build_parser, main
from crowdrisk.config_io import DEFAULT_NETWORK, save_network, save_scenario, write_json
from crowdrisk.reference import default_network
from crowdrisk.world_sim import CountPdf

from builders import location, scenario

FLAGS = ("--manifest", "--seed", "--runs", "--policy", "--out", "--jobs")


def tiny_study(directory, blocked=False, **manifest):
    """A one-path, one-time study; ``blocked`` parks a pedestrian on the road."""
    if blocked:
        scn = scenario([location(points=[(50.0, 0.0)], max_pedestrians=1)], pdf=CountPdf(((1, 1.0),)))
    else:
        pts = [(12.0, 6.0), (15.0, 6.0), (18.0, 8.0)]
        scn = scenario([location(points=pts, max_pedestrians=4)], pdf=CountPdf(((1, 0.5), (3, 0.5))))
    save_scenario(scn, directory / "scenario.json")
    save_network(default_network(), directory / DEFAULT_NETWORK)
    doc = {"scenario": "scenario.json", "network": DEFAULT_NETWORK, "runs": 2, **manifest}
    write_json(doc, directory / "manifest.json")
    return directory / "manifest.json"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_validate_reference(capsys):
    code, out, _ = run(capsys, "validate")
    assert code == EXIT_OK
    assert out.strip() == "ok: 13 locations, 3 paths, 147 traversals"


def test_validate_reports_every_problem(tmp_path, capsys):
    m = tiny_study(tmp_path, runs=0, policy="ddqn")
    code, out, err = run(capsys, "validate", "--manifest", m)
    assert code == EXIT_INVALID and out == ""
    assert "runs ≥ 1 required" in err and "ddqn" in err


def test_unknown_subcommand_and_flag_show_usage(capsys):
    for argv in (["launch"], ["risk", "--turbo"]):
        with pytest.raises(SystemExit) as info:
            main(argv)
        assert info.value.code == 2
        assert "usage:" in capsys.readouterr().err


@pytest.mark.parametrize("command", ["validate", "simulate", "risk", "experiment", "spikes"])
def test_help_lists_every_flag(command):
    text = build_parser()._subparsers._group_actions[0].choices[command].format_help()
    for flag in FLAGS:
        assert flag in text
    if command in ("experiment", "spikes"):
        assert "--table" in text


def test_simulate_writes_a_trace(tmp_path, capsys):
    code, out, err = run(capsys, "simulate", "--traversal", "B/Monday/17:00", "--seed", 7, "--out", tmp_path)
    assert code == EXIT_OK and out.startswith("B/Monday/17:00: ")
    with (tmp_path / "trace.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["traversal_id"] == "B/Monday/17:00"
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["traversal"] == "B/Monday/17:00" and meta["base_seed"] == 7


def test_simulate_unknown_traversal(tmp_path, capsys):
    code, _, err = run(capsys, "simulate", "--traversal", "Q/Monday/17:00", "--out", tmp_path)
    assert code == EXIT_INVALID and "unknown traversal" in err


def test_risk_is_reproducible_and_schedule_independent(tmp_path, capsys):
    m = tiny_study(tmp_path)
    outs = []
    for name, jobs in (("a", 1), ("b", 1), ("c", 2)):
        code, _, err = run(capsys, "risk", "--manifest", m, "--seed", 42, "--runs", 3, "--jobs", jobs, "--out", tmp_path / name)
        assert code == EXIT_OK
        assert "risk: 7/7 traversals" in err
        outs.append(tmp_path / name)
    for name in ("risk_table.csv", "normalized_risk.csv", "metadata.json"):
        a, b, c = ((d / name).read_bytes() for d in outs)
        assert a == b == c, name


def test_seed_changes_output(tmp_path, capsys):
    m = tiny_study(tmp_path)
    for s in (1, 2):
        run(capsys, "risk", "--manifest", m, "--seed", s, "--out", tmp_path / str(s))
    assert (tmp_path / "1" / "risk_table.csv").read_bytes() != (tmp_path / "2" / "risk_table.csv").read_bytes()


def test_experiment_on_the_reference_has_49_folds(tmp_path, capsys):
    # a precomputed table keeps this fast; the 49 chosen traversals are still driven
    rng = np.random.default_rng(0)
    with (tmp_path / "t.csv").open("w") as fh:
        fh.write("path,day,time,mean_risk\n")
        for p in "ABC":
            for d in ("Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday"):
                for t in ("07:00", "09:00", "11:00", "13:00", "15:00", "17:00", "19:00"):
                    fh.write(f"{p},{d},{t},{rng.uniform(1, 2) + (p == 'B')}\n")
    code, out, _ = run(capsys, "experiment", "which-path", "--table", tmp_path / "t.csv", "--out", tmp_path / "o")
    assert code == EXIT_OK
    assert "over 49 folds, 0 collisions" in out
    lines = (tmp_path / "o" / "experiment_which_path.csv").read_text().splitlines()
    assert len(lines) == 1 + 49 + 1


def test_experiment_collision_exit_code(tmp_path, capsys):
    m = tiny_study(tmp_path, blocked=True, policy="full-throttle")
    code, out, _ = run(capsys, "experiment", "which-day", "--manifest", m, "--out", tmp_path / "o")
    assert code == EXIT_COLLISION
    assert "1 folds" in out


def test_runtime_failure_exit_code(tmp_path, capsys):
    m = tiny_study(tmp_path, blocked=True)
    code, _, err = run(capsys, "risk", "--manifest", m, "--out", tmp_path / "o")
    assert code == EXIT_RUNTIME
    assert "RunError" in err and "seed 0" in err


def test_spikes_from_table(tmp_path, capsys):
    with (tmp_path / "t.csv").open("w") as fh:
        fh.write("path,day,time,mean_risk\nA,Mon,07:00,1\nA,Mon,09:00,1\nA,Mon,11:00,1\nA,Mon,17:00,9\n")
    code, out, _ = run(capsys, "spikes", "--table", tmp_path / "t.csv", "--out", tmp_path)
    assert code == EXIT_OK and out.strip() == "1 spikes at factor 2.0"
    assert (tmp_path / "spikes.csv").read_text().splitlines()[1].startswith("A,Mon,17:00,")


@pytest.mark.parametrize("argv", [["risk", "--runs", "0"], ["risk", "--seed", "-1"], ["risk", "--jobs", "0"], ["risk", "--policy", "ddqn"]])
def test_bad_flag_values(argv, capsys):
    with pytest.raises(SystemExit):
        main(argv)
    capsys.readouterr()


def test_zero_risk_study_still_writes_the_table(tmp_path, capsys):
    save_scenario(scenario(), tmp_path / "scenario.json")
    save_network(default_network(), tmp_path / DEFAULT_NETWORK)
    write_json({"scenario": "scenario.json", "network": DEFAULT_NETWORK, "runs": 1}, tmp_path / "m.json")
    code, _, err = run(capsys, "risk", "--manifest", tmp_path / "m.json", "--out", tmp_path / "o")
    assert code == EXIT_OK and "zero total risk" in err
    assert (tmp_path / "o" / "risk_table.csv").exists()
    assert not (tmp_path / "o" / "normalized_risk.csv").exists()

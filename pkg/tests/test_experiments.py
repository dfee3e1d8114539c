import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdrisk.config_io import write_risk_table_csv
from crowdrisk.experiments import (
    FOLD_COUNTS,
    KINDS,
    RESIM_SEED_OFFSET,
    ExperimentSpec,
    loocv,
    spike_report,
    which_day,
    which_path,
    which_time,
    write_report_csv,
    write_spikes_csv,
)
from crowdrisk.risk_engine import IncompleteTable, RiskTable, normalize
from crowdrisk.world_sim import DAYS

from builders import PATHS, TIMES, synthetic_trace, table_from_array
from oracles import loocv_from_csv

RUNNERS = {"which_path": which_path, "which_day": which_day, "which_time": which_time}


def ordered_table(axis, order, rng=None):
    """Every cell ranks the options along ``axis`` as ``order`` (lowest first)."""
    rng = rng or np.random.default_rng(0)
    arr = rng.uniform(1.0, 2.0, (3, 7, 7))
    rank = np.empty(len(order))
    rank[list(order)] = np.arange(len(order))
    shape = [1, 1, 1]
    shape[axis] = len(order)
    # offsets large enough to dominate the noise
    return table_from_array(arr + 10.0 * rank.reshape(shape))


@pytest.mark.parametrize("kind", KINDS)
def test_fold_counts(kind):
    rep = RUNNERS[kind](table_from_array(np.random.default_rng(1).uniform(size=(3, 7, 7))))
    assert rep.n_folds == FOLD_COUNTS[kind] == {"which_path": 49}.get(kind, 21)
    assert 0.0 <= rep.accuracy <= 1.0


def test_dominant_path():
    rep = which_path(ordered_table(0, [1, 0, 2]))
    assert rep.accuracy == 1.0
    assert {f.predicted for f in rep.folds} == {"B"}


def test_all_equal_cells_tie_everywhere():
    rep = which_path(table_from_array(np.ones((3, 7, 7))))
    assert rep.accuracy == 1.0
    assert all(f.tie for f in rep.folds)
    assert {f.predicted for f in rep.folds} == {"A"}


def test_sunday_cheapest():
    rep = which_day(ordered_table(1, [6, 0, 1, 2, 3, 4, 5]))
    assert rep.accuracy == 1.0 and {f.predicted for f in rep.folds} == {"Sunday"}


def test_dominant_time():
    rep = which_time(ordered_table(2, [3, 0, 1, 2, 4, 5, 6]))
    assert rep.accuracy == 1.0 and {f.predicted for f in rep.folds} == {"13:00"}


@pytest.mark.parametrize("kind, axis, options", [("which_day", 1, DAYS), ("which_time", 2, TIMES), ("which_path", 0, PATHS)])
def test_dominated_option_never_predicted(kind, axis, options):
    rng = np.random.default_rng(2)
    arr = rng.uniform(1.0, 2.0, (3, 7, 7))
    idx = [slice(None)] * 3
    idx[axis] = len(options) - 1
    arr[tuple(idx)] += 5.0
    rep = RUNNERS[kind](table_from_array(arr))
    assert options[-1] not in {f.predicted for f in rep.folds}


@pytest.mark.parametrize("kind", KINDS)
def test_matches_independent_csv_recomputation(kind):
    rng = np.random.default_rng(3)
    for _ in range(5):
        table = normalize(table_from_array(rng.lognormal(0, 1, (3, 7, 7))))
        buf = io.StringIO()
        write_risk_table_csv(table, buf)
        rows = list(csv.DictReader(io.StringIO(buf.getvalue())))
        assert RUNNERS[kind](table).accuracy == loocv_from_csv(rows, kind)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.5, 2.0, 10.0, 1e-3, 7.3]))
def test_predictions_invariant_under_scaling(seed, c):
    table = table_from_array(np.random.default_rng(seed).uniform(1, 100, (3, 7, 7)))
    scaled = table.scaled(c)
    for kind in KINDS:
        a, b = RUNNERS[kind](table), RUNNERS[kind](scaled)
        assert [f.predicted for f in a.folds] == [f.predicted for f in b.folds]
        assert a.accuracy == b.accuracy


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.permutations(range(3)))
def test_consistent_ordering_scores_one(seed, order):
    rng = np.random.default_rng(seed)
    noise = rng.uniform(0, 0.5, (1, 7, 7))
    arr = noise + np.asarray(order, dtype=float).reshape(3, 1, 1)
    assert which_path(table_from_array(arr)).accuracy == 1.0


def test_resimulation_seeds_and_collision_total():
    seen = []

    def navigate(tr, seed):
        seen.append((tr, seed))
        return synthetic_trace([0, 1], traversal=tr) if seed % 2 else collided(tr)

    def collided(tr):
        t = synthetic_trace([0, 1, 2], traversal=tr)
        recs = tuple(r.__class__(r.i, r.vehicle, r.pedestrians, r.q, r.evidence, r.i > 0) for r in t.records)
        return t.__class__(tr, None, recs, True)

    table = ordered_table(2, [0, 1, 2, 3, 4, 5, 6])
    rep = loocv(table, ExperimentSpec("which_time", base_seed=5, navigate=navigate))
    assert [s for _, s in seen] == [5 + RESIM_SEED_OFFSET + j for j in range(21)]
    assert all(tr.time == "07:00" for tr, _ in seen)
    assert rep.collisions == sum(f.collisions for f in rep.folds) == 2 * sum(1 for _, s in seen if s % 2 == 0)


def test_incomplete_table():
    arr = np.ones((3, 7, 7))
    t = table_from_array(arr)
    cells = dict(t.cells)
    cells.pop(("B", "Friday", "17:00"))
    with pytest.raises(IncompleteTable, match="incomplete table"):
        which_path(RiskTable(t.paths, t.days, t.times, cells))


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec("which_week")
    with pytest.raises(ValueError):
        which_day(table_from_array(np.ones((3, 7, 7))), ExperimentSpec("which_path"))


def test_uniform_table_has_no_spikes():
    assert spike_report(table_from_array(np.ones((3, 7, 7)))) == []


def test_constructed_spike():
    arr = np.ones((3, 7, 7))
    arr[1, 2, 5] = 3.0
    spikes = spike_report(table_from_array(arr), 2.0)
    assert [(s.path, s.day, s.time) for s in spikes] == [("B", "Wednesday", "17:00")]
    assert spikes[0].ratio == pytest.approx(3.0 * 49 / 51)


def test_report_csv():
    rep = which_path(ordered_table(0, [1, 0, 2]))
    buf = io.StringIO()
    write_report_csv(rep, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "fold,held_out,predicted,truth,correct,tie,collisions"
    assert len(lines) == 1 + 49 + 1
    assert lines[1].startswith("0,Monday/07:00,B,B,1,0,")
    assert lines[-1] == "summary,which_path,,,1.0,0,0"
    buf = io.StringIO()
    write_spikes_csv(spike_report(table_from_array(np.ones((3, 7, 7)))), buf)
    assert buf.getvalue() == "path,day,time,ratio_to_path_mean\n"

import itertools

import numpy as np
import pytest

from crowdrisk.bayes_net import validate
from crowdrisk.config_io import REFERENCE_MANIFEST, data_path, read_json, scenario_to_dict, validate_scenario
from crowdrisk.geometry import Polyline
from crowdrisk.reference import (
    LAYOUT,
    TIMES,
    activity,
    binomial_pdf,
    default_network,
    reference_manifest_dict,
    reference_scenario,
    route_waypoints,
    write_reference_data,
)


@pytest.fixture(scope="module")
def scn():
    return reference_scenario()


def test_shape(scn):
    assert len(scn.traversals()) == 147
    assert len(scn.locations) == len(LAYOUT) == 13
    assert scn.times == TIMES and len(scn.days) == 7
    assert validate_scenario(scn, default_network()) == []
    assert validate(default_network(), require_inputs=True) == []


def test_shipped_data_is_regenerated_exactly(tmp_path, scn):
    write_reference_data(tmp_path)
    for name in ("reference_scenario.json", "default_network.json", REFERENCE_MANIFEST):
        assert (tmp_path / name).read_bytes() == data_path(name).read_bytes(), name
    assert read_json(data_path(REFERENCE_MANIFEST)) == reference_manifest_dict()
    assert read_json(data_path("reference_scenario.json")) == scenario_to_dict(scn)


def test_spawn_points_stay_off_every_path(scn):
    lines = [Polyline(v) for v in scn.paths.values()]
    for loc in scn.locations:
        for p in loc.spawn_points:
            assert min(line.distance_to(p) for line in lines) >= 3.0, (loc.id, p)


def test_paths_share_start_and_goal(scn):
    ends = {(tuple(v[0]), tuple(v[-1])) for v in scn.paths.values()}
    assert ends == {((0.0, 0.0), (160.0, 0.0))}
    for v in scn.paths.values():
        assert np.hypot(*np.diff(v, axis=0).T).max() <= 10.0 + 1e-9


def test_route_waypoints_spacing():
    pts = route_waypoints([(0, 0), (0, 25)], 10.0)
    assert np.allclose(pts[:, 1], [0, 25 / 3, 50 / 3, 25])


@pytest.mark.parametrize("n, p", [(20, 0.0), (20, 0.3), (30, 0.85), (6, 1.0)])
def test_binomial_pdf_is_valid(n, p):
    pdf = binomial_pdf(n, p)
    assert pdf.problems() == []
    assert pdf.max_count <= n
    assert pdf.mean == pytest.approx(n * p, abs=0.01 * n)


def test_pdfs_respect_caps(scn):
    for loc in scn.locations:
        for d, t in itertools.product(scn.days, scn.times):
            assert scn.crowd_pdfs[(loc.id, d, t)].max_count <= loc.max_pedestrians


def test_weekday_rush_hour_peaks_commercial_activity():
    for d in ("Monday", "Tuesday", "Wednesday", "Thursday", "Friday"):
        profile = [activity("commercial", d, t) for t in TIMES]
        assert max(profile) == activity("commercial", d, "17:00")
    assert activity("commercial", "Saturday", "17:00") < activity("commercial", "Monday", "17:00") / 5


def test_default_network_is_worse_at_night_and_in_fog():
    from crowdrisk.bayes_net import query

    net = default_network()
    base = {"NumPedestrians": "6-15", "Night": "false", "Weekday": "mon-thu", "Weather": "clear"}
    p = query(net, "Accident", "true", base)
    assert query(net, "Accident", "true", {**base, "Night": "true"}) > p
    assert query(net, "Accident", "true", {**base, "Weather": "fog"}) > p

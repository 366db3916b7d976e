import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import understeer_gain
from tilc.maneuvers import double_lane_change
from tilc.params import VehicleParams
from tilc.refgen import (RefFilter, ReferenceGenerator, StaticYawMap, build_static_map, filter_step,
                         static_reference)

P = VehicleParams()
DEG = math.pi / 180


@pytest.fixture(scope="module")
def ymap():
    return build_static_map(P)


# -- static map


def test_zero_steer_gives_zero(ymap):
    for v in ymap.speeds:
        assert static_reference(ymap, 0.0, v) == 0.0


def test_small_steer_matches_linear_gain(ymap):
    s = ymap.steers[1]  # 0.25 deg
    for v in ymap.speeds:
        lin = understeer_gain(P, v) * s
        assert static_reference(ymap, s, v) == pytest.approx(lin, rel=0.02)


def test_map_monotone_then_saturated(ymap):
    T = ymap.as_array()
    assert np.all(np.diff(T, axis=1) >= 0.0)
    # each row ends flat: the last few steers hold the per-speed maximum
    for i in range(len(ymap.speeds)):
        row = T[i]
        assert row[-1] == row.max()
    flat = [np.sum(T[i] == T[i].max()) for i in range(len(ymap.speeds))]
    assert max(flat) > 1


def test_map_saturates_beyond_peak_slip(ymap):
    # at high speed the front axle reaches its peak well inside the steer grid
    i = ymap.speeds.index(min(ymap.speeds, key=lambda v: abs(v - 120 / 3.6)))
    row = ymap.as_array()[i]
    assert np.sum(row == row.max()) >= 10


def test_odd_symmetry_full_grid(ymap):
    for v in ymap.speeds[::3]:
        for s in ymap.steers[::7]:
            assert static_reference(ymap, -s, v) == -static_reference(ymap, s, v)


def test_grid_node_and_midpoint(ymap):
    T = ymap.as_array()
    i, j = 5, 12
    assert static_reference(ymap, ymap.steers[j], ymap.speeds[i]) == pytest.approx(T[i, j], abs=1e-15)
    vm = 0.5 * (ymap.speeds[i] + ymap.speeds[i + 1])
    assert static_reference(ymap, ymap.steers[j], vm) == pytest.approx(0.5 * (T[i, j] + T[i + 1, j]), rel=1e-12)


def test_speed_clamped_to_grid(ymap):
    s = ymap.steers[8]
    assert static_reference(ymap, s, 1.0) == static_reference(ymap, s, ymap.speeds[0])
    assert static_reference(ymap, s, 500.0) == static_reference(ymap, s, ymap.speeds[-1])


@given(st.floats(-0.4, 0.4), st.floats(5.0, 70.0))
def test_reference_odd_property(s, v):
    ymap = build_static_map(P)
    assert static_reference(ymap, -s, v) == pytest.approx(-static_reference(ymap, s, v), abs=1e-15)


def test_bad_grids_rejected():
    with pytest.raises(ValueError):
        build_static_map(P, speeds=(20.0, 10.0), steers=(0.0, 0.01))
    with pytest.raises(ValueError):
        build_static_map(P, speeds=(-1.0, 10.0), steers=(0.0, 0.01))
    with pytest.raises(ValueError):
        build_static_map(P, speeds=(10.0, 20.0), steers=(0.01, 0.02))


def test_csv_round_trip(ymap, tmp_path):
    path = tmp_path / "map.csv"
    ymap.to_csv(path)
    back = StaticYawMap.from_csv(path)
    assert back == ymap


# -- reference filter


def test_filter_unit_dc_and_convergence():
    f = RefFilter(6.3, 0.01)
    assert f.filter.dc_gain == pytest.approx(1.0, abs=1e-12)
    y = [filter_step(f, 0.3) for _ in range(300)]
    assert y[-1] == pytest.approx(0.3, abs=1e-9)


def test_filter_minus_six_db_at_corner():
    f = RefFilter(6.3, 0.01)
    mag = abs(f.filter.freqresp(6.3))
    assert 20 * math.log10(mag) == pytest.approx(20 * math.log10(0.5), abs=0.01)


def test_filter_poles_stable():
    f = RefFilter(6.3, 0.01)
    assert np.all(np.abs(f.filter.poles) < 1.0)


def test_filter_zero_in_zero_out():
    f = RefFilter()
    assert all(f.step(0.0) == 0.0 for _ in range(200))


def test_filter_step_overshoot_bounded():
    f = RefFilter()
    y = np.array([f.step(1.0) for _ in range(300)])
    assert y.max() <= 1.25


def test_reference_within_map_bound_on_dlc(ymap):
    man = double_lane_change(120.0)
    gen = ReferenceGenerator(ymap)
    v = float(man.speed[0])
    r = np.array([gen.step(s, v) for s in man.steer])
    assert np.max(np.abs(r)) <= 1.25 * ymap.max_yaw_rate(v)

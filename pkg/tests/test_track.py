"""Track geometry: construction, Frenet conversions, file format."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftcorner.errors import BadGridSpec, BadTrackSpec, OutOfRange
from driftcorner.track import (
    FrenetPoint,
    build_library_track,
    discretize,
    load_track,
    save_track,
    to_cartesian,
    to_frenet,
)


def random_on_track_points(track, n, rng):
    s = rng.uniform(0.0, track.s_max, n)
    l = rng.uniform(-track.half_width, track.half_width, n)
    return s, l


# -- library construction ----------------------------------------------


def test_uturn_dimensions(uturn):
    # 30 m entry + half-circle of radius 11 + 70 m exit
    assert uturn.s_max == pytest.approx(30 + math.pi * 11 + 70)
    assert uturn.half_width == 2.75
    assert uturn.curvature_at(50.0) == pytest.approx(1 / 11, abs=1e-9)
    assert uturn.curvature_at(10.0) == 0.0


def test_right_angle_arc_length(right_angle):
    assert right_angle.s_max == pytest.approx(30 + math.pi * 11 / 2 + 70)


def test_heading_change_totals(all_tracks):
    expect = {"uturn": math.pi, "right_angle": math.pi / 2, "turn_135": 3 * math.pi / 4}
    for kind, track in all_tracks.items():
        sweep = track.heading_at(track.s_max) - track.heading_at(0.0)
        assert sweep == pytest.approx(expect[kind], abs=1e-9)


def test_bad_track_specs():
    with pytest.raises(BadTrackSpec):
        build_library_track("hairpin")
    with pytest.raises(BadTrackSpec):
        build_library_track("uturn", radius=2.0, width=5.5)
    with pytest.raises(BadTrackSpec):
        build_library_track("uturn", entry_len=-1.0)


def test_heading_integrates_curvature(uturn):
    # heading increments must match the curvature integral between samples
    s = uturn.s
    dh = np.diff(uturn.heading)
    mid_k = np.array([uturn.curvature_at(float(v)) for v in (s[:-1] + s[1:]) / 2])
    assert np.max(np.abs(dh - mid_k * np.diff(s))) < 1e-6


def test_curvature_query_bounds(uturn):
    with pytest.raises(OutOfRange):
        uturn.curvature_at(-0.5)
    with pytest.raises(OutOfRange):
        uturn.heading_at(uturn.s_max + 0.5)


# -- Frenet round trip --------------------------------------------------


def test_round_trip_on_track_points(all_tracks, rng):
    for track in all_tracks.values():
        s, l = random_on_track_points(track, 1000, rng)
        for si, li in zip(s, l):
            x, y = to_cartesian(FrenetPoint(float(si), float(li)), track)
            fp = to_frenet((x, y), track)
            x2, y2 = to_cartesian(fp, track)
            assert math.hypot(x2 - x, y2 - y) < 1e-6


def test_projection_matches_brute_force(uturn, rng):
    from scipy.optimize import minimize_scalar

    s_dense = np.linspace(0.0, uturn.s_max, 200_000)
    cx = np.interp(s_dense, uturn.s, uturn.x)
    cy = np.interp(s_dense, uturn.s, uturn.y)
    s, l = random_on_track_points(uturn, 50, rng)
    for si, li in zip(s, l):
        x, y = to_cartesian(FrenetPoint(float(si), float(li)), uturn)
        fp = to_frenet((x, y), uturn)
        coarse = s_dense[np.argmin((cx - x) ** 2 + (cy - y) ** 2)]

        def dist2(sv):
            px, py = uturn.position_at(float(np.clip(sv, 0, uturn.s_max)))
            return (px - x) ** 2 + (py - y) ** 2

        ref = minimize_scalar(
            dist2, bounds=(coarse - 0.01, coarse + 0.01), method="bounded",
            options={"xatol": 1e-9},
        ).x
        assert abs(fp.s - ref) < 1e-4


def test_projection_at_track_start(uturn):
    x, y = to_cartesian(FrenetPoint(0.0, 0.3), uturn)
    fp = to_frenet((x, y), uturn)
    assert fp.s == pytest.approx(0.0, abs=1e-9)
    assert fp.l == pytest.approx(0.3, abs=1e-9)


def test_left_of_travel_is_positive_l(uturn):
    # entry runs along +x from the origin, so +y is left of travel
    fp = to_frenet((10.0, 1.0), uturn)
    assert fp.l == pytest.approx(1.0, abs=1e-9)
    assert to_frenet((10.0, -1.0), uturn).l == pytest.approx(-1.0, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(s=st.floats(0.0, 1.0), l=st.floats(-2.6, 2.6))
def test_round_trip_property(s, l):
    track = build_library_track("right_angle")
    p = FrenetPoint(s * track.s_max, l)
    x, y = to_cartesian(p, track)
    x2, y2 = to_cartesian(to_frenet((x, y), track), track)
    assert math.hypot(x2 - x, y2 - y) < 1e-6


def test_hint_window_projection(uturn):
    x, y = to_cartesian(FrenetPoint(55.0, -0.8), uturn)
    fp = to_frenet((x, y), uturn, s_hint=54.0)
    assert fp.s == pytest.approx(55.0, abs=1e-6)


# -- grid / file format --------------------------------------------------


def test_discretize_shapes(uturn):
    grid = discretize(uturn, 20, 7, -2.0, 2.0)
    assert len(grid.s_values) == 21
    assert len(grid.l_values) == 7
    assert grid.s_values[0] == 0.0
    assert grid.s_values[-1] == pytest.approx(uturn.s_max)


def test_discretize_rejects_bad_specs(uturn):
    with pytest.raises(BadGridSpec):
        discretize(uturn, 0, 5, -1, 1)
    with pytest.raises(BadGridSpec):
        discretize(uturn, 5, 5, 1, -1)
    with pytest.raises(BadGridSpec):
        discretize(uturn, 5, 5, -10, 10)


def test_track_file_round_trip(uturn, tmp_path):
    path = tmp_path / "track.csv"
    save_track(uturn, path)
    back = load_track(path)
    assert back.half_width == uturn.half_width
    assert back.s_max == pytest.approx(uturn.s_max)
    np.testing.assert_allclose(back.x, uturn.x, atol=1e-12)
    # analytic segment map survives the round trip
    assert back.curvature_at(50.0) == pytest.approx(1 / 11, abs=1e-12)


def test_load_rejects_foreign_files(tmp_path):
    p = tmp_path / "junk.csv"
    p.write_text("s,x,y\n0,0,0\n")
    with pytest.raises(BadTrackSpec):
        load_track(p)

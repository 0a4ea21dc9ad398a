import math

import numpy as np
import pytest

import oracles
from terraprint.core import Pose
from terraprint.planner import (PathSegment, Trajectory, eval_segment, plan_velocity, segment_path)
from terraprint.terrain import build_scenario, reference_scenario

FLAT = build_scenario({"kind": "flat"})


def _seg(p0, pf, v=0.5, hint="flat"):
    p0, pf = np.asarray(p0, float), np.asarray(pf, float)
    return PathSegment(Pose(p0), Pose(pf), float(np.linalg.norm(pf - p0)), v, hint)


def test_two_waypoints_flat_one_segment():
    plan = segment_path([(0, 0, 0.3), (10, 0, 0.3)], 0.002, FLAT)
    assert len(plan.segments) == 1
    assert math.isclose(plan.total_length, 10.0)


def test_square_path_four_segments():
    wps = [(0, 0, 0.3), (2, 0, 0.3), (2, 2, 0.3), (0, 2, 0.3), (0, 0, 0.3)]
    plan = segment_path(wps, 0.002, FLAT)
    assert len(plan.segments) == 4
    assert math.isclose(plan.total_length, 8.0)


def test_slope_is_subdivided_within_chord_tolerance():
    field = reference_scenario()
    plan = segment_path([(0, 0, 0.3), (10, 0, 0.3)], 0.002, field)
    assert len(plan.segments) > 1
    on_slope = [s for s in plan.segments if max(s.p0.position[0], s.pf.position[0]) > 5.0]
    assert on_slope
    for seg in plan.segments:
        mid = 0.5 * (seg.p0.position + seg.pf.position)
        assert abs(mid[2] - (oracles.incline_height(mid[0]) + 0.3)) <= 0.002
        # vertices sit on the terrain-following height
        for p in (seg.p0.position, seg.pf.position):
            assert math.isclose(p[2], oracles.incline_height(p[0]) + 0.3, abs_tol=1e-12)


def test_rough_terrain_chord_deviation_bounded():
    field = build_scenario({"kind": "rough", "rough_amp_mm": 8.0, "rough_cutoff_cpm": 0.5, "seed": 1})
    plan = segment_path([(0, 0, 0.3), (10, 0, 0.3)], 0.002, field)
    for seg in plan.segments:
        for s in np.linspace(0, 1, 21):
            p = eval_segment(seg, s).position
            assert abs(p[2] - field.height(p[0], p[1]) - 0.3) <= 0.002 + 1e-9


def test_segments_are_c0_and_tool_normal_to_terrain():
    field = reference_scenario()
    plan = segment_path([(0, 0, 0.3), (10, 0, 0.3)], 0.002, field)
    for a, b in zip(plan.segments[:-1], plan.segments[1:]):
        assert np.array_equal(a.pf.position, b.p0.position)
    last = plan.segments[-1].pf
    assert np.allclose(last.rotation[:, 2], [-math.sin(math.radians(5)), 0, math.cos(math.radians(5))])


def test_segment_path_validation():
    with pytest.raises(ValueError):
        segment_path([(0, 0, 0)], 0.002, FLAT)
    with pytest.raises(ValueError):
        segment_path([(0, 0, 0), (1, 0, 0)], 0.0, FLAT)


def test_eval_segment_endpoints_and_midpoint():
    seg = _seg((0, 0, 0), (2, 0, 0))
    assert eval_segment(seg, 0.0).position.tolist() == [0, 0, 0]
    assert eval_segment(seg, 1.0) is seg.pf
    assert np.array_equal(eval_segment(seg, 0.5).position, [1.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        eval_segment(seg, 1.5)


def test_eval_segment_slerps_orientation():
    seg = PathSegment(Pose(), Pose(np.array([1.0, 0, 0]), oracles.rz(0.4)), 1.0, 0.5)
    R = eval_segment(seg, 0.25).rotation
    assert np.allclose(R, oracles.rz(0.1), atol=1e-12)


def test_trapezoid_duration_example():
    profs = plan_velocity(type("P", (), {"segments": (_seg((0, 0, 0), (1, 0, 0), v=0.5),)})(),
                          {"v_max": 0.5, "a_max": 1.0})
    assert math.isclose(profs[0].duration, 2 * 0.5 + (1 - 0.25) / 0.5)
    assert math.isclose(profs[0].duration, oracles.trapezoid_duration(1.0, 0.5, 1.0))


@pytest.mark.parametrize("L,v,a", [(0.05, 0.5, 1.0), (3.0, 0.35, 0.25), (10.0, 0.36, 0.25)])
def test_trapezoid_matches_closed_form(L, v, a):
    plan = segment_path([(0, 0, 0.3), (L, 0, 0.3)], 0.002, FLAT, v_max=v)
    prof = plan_velocity(plan, {"v_max": v, "a_max": a})[0]
    assert math.isclose(prof.duration, oracles.trapezoid_duration(L, v, a), rel_tol=1e-12)
    assert math.isclose(prof.distance(prof.duration), L, rel_tol=1e-12)


def test_zero_length_segment_has_zero_duration():
    plan = type("P", (), {"segments": (_seg((0, 0, 0), (0, 0, 0)),)})()
    prof = plan_velocity(plan, {"v_max": 0.5, "a_max": 1.0})[0]
    assert prof.duration == 0.0 and prof.s_at(0.0) == 1.0


def test_s_monotone_and_speed_bounded():
    field = build_scenario({"kind": "mixed", "slope_deg": 5, "rough_amp_mm": 6, "seed": 2})
    wps = [(0, 0, 0.3), (4, 0, 0.3), (4, 3, 0.3), (8, 3.5, 0.3)]
    plan = segment_path(wps, 0.002, field)
    profs = plan_velocity(plan, {"v_max": 0.35, "a_max": 0.25})
    for prof in profs:
        ts = np.linspace(0, prof.duration, 200)
        s = [prof.s_at(t) for t in ts]
        assert np.all(np.diff(s) >= 0)
        assert max(prof.speed(t) for t in ts) <= 0.35 * 0.5 + 1e-12  # rough hint halves the speed
    traj = Trajectory(plan, profs)
    assert traj.speed(0.0) == 0.0 and abs(traj.speed(traj.t_end)) < 1e-12
    assert traj.exhausted(traj.t_end) and not traj.exhausted(0.5 * traj.t_end)
    assert traj.pose(traj.t_end + 5).position.tolist() == plan.segments[-1].pf.position.tolist()


def test_corner_stops_and_collinear_flows():
    sq = segment_path([(0, 0, 0.3), (2, 0, 0.3), (2, 2, 0.3)], 0.002, FLAT)
    p = plan_velocity(sq, {"v_max": 0.35, "a_max": 0.25})
    assert p[0].v_exit == 0.0 and p[1].v_entry == 0.0
    line = segment_path([(0, 0, 0.3), (2, 0, 0.3), (4, 0, 0.3)], 0.002, FLAT)
    p = plan_velocity(line, {"v_max": 0.35, "a_max": 0.25})
    assert math.isclose(p[0].v_exit, 0.35) and math.isclose(p[1].v_entry, 0.35)


def test_trajectory_is_continuous_in_time():
    plan = segment_path([(0, 0, 0.3), (10, 0, 0.3)], 0.002, reference_scenario())
    traj = Trajectory(plan, plan_velocity(plan, {"v_max": 0.36, "a_max": 0.25}))
    ts = np.arange(0, traj.t_end, 0.01)
    pos = np.array([traj.pose(t).position for t in ts])
    assert np.max(np.linalg.norm(np.diff(pos, axis=0), axis=1)) <= 0.36 * 0.01 + 1e-9


def test_plan_csv(tmp_path):
    plan = segment_path([(0, 0, 0.3), (10, 0, 0.3)], 0.002, reference_scenario())
    plan.to_csv(tmp_path / "plan.csv")
    rows = (tmp_path / "plan.csv").read_text().splitlines()
    assert len(rows) == len(plan.segments) + 1

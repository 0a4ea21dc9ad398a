"""Randomized properties over the core algebra, solver, planner and config format."""

import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from terraprint import config
from terraprint.core import DisturbanceVec, Pose, compose, pose_error, so3_exp, so3_log
from terraprint.mpc.coordination import clamp_arm
from terraprint.mpc.qp import solve_box_qp
from terraprint.planner import Trajectory, plan_velocity, segment_path
from terraprint.terrain import build_scenario

SETTINGS = settings(max_examples=60, deadline=None)

small = st.floats(-1.0, 1.0, allow_nan=False)
vec3 = st.tuples(small, small, small).map(np.array)
rotvec = st.tuples(*[st.floats(-1.8, 1.8)] * 3).map(np.array)
poses = st.tuples(vec3, rotvec).map(lambda pr: Pose(pr[0] * 5.0, so3_exp(pr[1])))


@SETTINGS
@given(poses, poses, poses)
def test_compose_is_associative(a, b, c):
    left = compose(compose(a, b), c).to_matrix()
    right = compose(a, compose(b, c)).to_matrix()
    assert np.allclose(left, right, atol=1e-12)


@SETTINGS
@given(poses)
def test_inverse_undoes_compose(a):
    assert np.allclose(compose(a, a.inverse()).to_matrix(), np.eye(4), atol=1e-12)


@SETTINGS
@given(rotvec)
def test_so3_log_inverts_exp(w):
    if np.linalg.norm(w) < math.pi - 1e-6:
        assert np.allclose(so3_log(so3_exp(w)), w, atol=1e-9)
    assert np.allclose(so3_exp(w), oracles.rodrigues(w), atol=1e-12)


@SETTINGS
@given(poses, vec3, rotvec)
def test_pose_error_recovers_applied_offset(a, dp, dr):
    dr = dr * 0.1
    target = Pose(a.position + dp, a.rotation @ so3_exp(dr))
    e = pose_error(target, a).as_array()
    assert np.allclose(e[:3], dp, atol=1e-12)
    assert np.allclose(e[3:], dr, atol=1e-9)


@SETTINGS
@given(st.lists(st.floats(-1.0, 1.0), min_size=12, max_size=12))
def test_disturbance_arithmetic(xs):
    a = DisturbanceVec.from_array(xs[:6])
    b = DisturbanceVec.from_array(xs[6:])
    assert np.allclose(((a + b) - b).as_array(), a.as_array(), atol=1e-15)
    assert np.array_equal((-a).as_array(), -a.as_array())


@SETTINGS
@given(st.tuples(*[st.floats(-1.0, 1.0)] * 3).map(np.array))
def test_clamp_partitions_request(req):
    clamped, overflow = clamp_arm(req)
    assert np.array_equal(overflow, req - clamped)
    assert np.all(np.abs(clamped + overflow - req) <= np.spacing(np.abs(req)))
    assert np.all(np.abs(clamped) <= np.array([0.3, 0.3, 0.15]))
    assert np.all(overflow * clamped >= 0.0)  # overflow never points back into the box


@SETTINGS
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_box_qp_satisfies_kkt(seed, n):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n + 2, n))
    H = A.T @ A + 0.1 * np.eye(n)
    f = rng.normal(size=n) * 3.0
    lb = -rng.uniform(0.1, 1.0, n)
    ub = rng.uniform(0.1, 1.0, n)
    res = solve_box_qp(H, f, lb, ub)
    x = res.x
    assert res.converged
    assert np.all(x >= lb) and np.all(x <= ub)
    g = H @ x + f
    tol = 1e-9 * (1.0 + np.abs(f).max() + np.abs(H).max())
    free = (x > lb) & (x < ub)
    assert np.all(np.abs(g[free]) <= tol)
    assert np.all(g[x == lb] >= -tol) and np.all(g[x == ub] <= tol)


@SETTINGS
@given(st.floats(0.05, 12.0), st.floats(0.1, 1.0), st.floats(0.05, 1.0))
def test_single_segment_profile(L, v, a):
    flat = build_scenario({"kind": "flat"})
    plan = segment_path([(0, 0, 0.3), (L, 0, 0.3)], 0.002, flat, v_max=v)
    profs = plan_velocity(plan, {"v_max": v, "a_max": a})
    traj = Trajectory(plan, profs)
    assert math.isclose(traj.t_end, oracles.trapezoid_duration(L, v, a), rel_tol=1e-9)
    ts = np.linspace(0.0, traj.t_end, 50)
    xs = [traj.pose(t).position[0] for t in ts]
    assert np.all(np.diff(xs) >= -1e-12)
    assert max(traj.speed(t) for t in ts) <= v + 1e-12


keys = st.from_regex(r"[a-z][a-z_]{0,8}(\.[a-z_]{1,8})?", fullmatch=True)
values = st.from_regex(r"[A-Za-z0-9_.,;:+-][A-Za-z0-9_.,;:+ -]{0,20}[A-Za-z0-9_.,;:+-]", fullmatch=True)


@SETTINGS
@given(st.dictionaries(keys, values, max_size=10))
def test_config_text_roundtrip(d):
    text = "# generated\n" + "".join(f"{k} = {v}\n" for k, v in d.items())
    assert config.parse_text(text) == d

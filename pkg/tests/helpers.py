"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np

from terraprint.core import DisturbanceVec, Pose, RobotState, matrix_from_rpy, so3_exp
from terraprint.mpc import MpcParams, MpcProblem

TOOL = (0.5, 0.0, 0.3)


def random_problem(rng: np.random.Generator, params: MpcParams | None = None, scale: float = 0.02,
                   previews: bool = True) -> MpcProblem:
    """A small random MPC problem around a tilted, moving chassis."""
    params = params or MpcParams()
    rpy = rng.uniform([-0.05, -0.09, -np.pi], [0.05, 0.09, np.pi])
    base = Pose(rng.uniform(-5, 5, 3), matrix_from_rpy(rpy))
    arm = rng.uniform(-0.05, 0.05, 3)
    state = RobotState(base, tuple(rng.uniform([0.0, -0.05], [0.4, 0.05])), arm)
    ee0 = base @ Pose(np.asarray(TOOL) + arm)
    u_prev = rng.uniform(-1, 1, 5) * np.array([0.3, 0.05, 0.02, 0.02, 0.02])
    refs = []
    for k in range(params.N):
        dp = rng.normal(0.0, scale, 3) + (k + 1) * 0.1 * u_prev[0] * base.rotation[:, 0]
        refs.append(Pose(ee0.position + dp, ee0.rotation @ so3_exp(rng.normal(0.0, 0.2 * scale, 3))))
    if previews:
        d = rng.normal(0.0, 1e-3, 6) * np.array([1, 1, 1, 0.5, 0.5, 0.5])
        w = np.clip((params.N - 1 - np.arange(params.N)) / max(1, params.N - 5), 0, 1)
        prev = tuple(DisturbanceVec.from_array(wk * d) for wk in w)
    else:
        prev = tuple(DisturbanceVec.zero() for _ in range(params.N))
    return MpcProblem(state, tuple(refs), prev, params, ee0, u_prev, TOOL, ee0)

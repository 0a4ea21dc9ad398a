"""Preview MPC on a linearized kinematic end-effector model.

Decision variables are the first ``Nc`` inputs ``u = (v, omega, arm_vx,
arm_vy, arm_vz)``; inputs are held at ``u[Nc-1]`` for the rest of the
horizon. The chassis unicycle is linearized about the current heading and
the previously commanded speed, and its rates follow the commands through a
first-order lag; chassis height follows the current contact plane; arm
velocities act in the chassis frame. Disturbance previews are
per-step increments of the end-effector pose and accumulate along the
horizon.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from terraprint.core import DisturbanceVec, Pose, RobotState, pose_error, rot_z, so3_log
from terraprint.mpc.qp import QpError, solve_box_qp

N_INPUT = 5
N_ERR = 6
PREVIEW_VALID = 5  # steps covered by the 0.5 s prediction horizon


@dataclass(frozen=True)
class MpcParams:
    N: int = 10
    Nc: int = 5
    dt: float = 0.1
    Q: tuple = (1e6, 1e6, 1e6, 1e5, 1e5, 1e5)
    R: tuple = (1.0, 1.0, 10.0, 10.0, 10.0)
    v_max: float = 1.0
    omega_max: float = 1.0
    arm_vel_max: float = 0.2
    arm_z_limit: float = 0.15
    tau_chassis: float = 0.05

    def __post_init__(self):
        if not self.N >= self.Nc >= 1:
            raise ValueError("need N >= Nc >= 1")
        if len(self.Q) != N_ERR or len(self.R) != N_INPUT:
            raise ValueError("Q needs 6 and R needs 5 diagonal entries")
        if min(self.Q) < 0.0 or min(self.R) <= 0.0:
            raise ValueError("Q must be PSD and R positive definite")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.tau_chassis < 0.0:
            raise ValueError("tau_chassis must be >= 0")

    @property
    def upper(self) -> np.ndarray:
        a = self.arm_vel_max
        return np.array([self.v_max, self.omega_max, a, a, a])

    def widened(self, factor: float) -> "MpcParams":
        return replace(self, v_max=self.v_max * factor, omega_max=self.omega_max * factor,
                       arm_vel_max=self.arm_vel_max * factor)


@dataclass(frozen=True)
class MpcProblem:
    """One receding-horizon problem.

    ``reference[k]`` is the target for the pose reached after ``k+1`` steps;
    ``previews[k]`` is the predicted disturbance increment over step ``k``
    (position part in the heading frame, rotation part in the body frame).
    """

    x0: RobotState
    reference: tuple
    previews: tuple
    params: MpcParams
    ee0: Pose
    u_prev: np.ndarray = field(default_factory=lambda: np.zeros(N_INPUT))
    tool_nominal: tuple = (0.5, 0.0, 0.3)
    current_reference: Pose | None = None
    terminal: bool = False

    def __post_init__(self):
        N = self.params.N
        if len(self.reference) != N or len(self.previews) != N:
            raise ValueError(f"reference and previews must both have length N={N}")

    @property
    def current_error(self) -> DisturbanceVec:
        ref = self.current_reference if self.current_reference is not None else self.ee0
        return pose_error(ref, self.ee0)


@dataclass(frozen=True)
class MpcSolution:
    u_seq: np.ndarray  # (Nc, 5)
    predicted_errors: tuple
    cost: float
    solve_time: float
    active_constraints: int
    flagged: bool = False
    iterations: int = 0

    @property
    def u0(self) -> np.ndarray:
        return self.u_seq[0]


def preview_weights(N: int, valid: int = PREVIEW_VALID) -> np.ndarray:
    """1 inside the predictor's validity, then a linear ramp reaching 0 at the last step."""
    w = np.ones(N)
    tail = N - valid
    for k in range(valid, N):
        w[k] = (N - 1 - k) / tail
    return w


def build_problem(state: RobotState, trajectory, t: float, net, features, params: MpcParams,
                  ee: Pose | None = None, u_prev=None, tool_nominal=(0.5, 0.0, 0.3)) -> MpcProblem:
    """Sample the reference ahead of ``t`` and fill the disturbance previews.

    ``net`` may be ``None`` (zero predictor). Past the end of the trajectory the
    reference holds the final pose.
    """
    if ee is None:
        ee = state.base @ Pose(np.asarray(tool_nominal, dtype=float) + state.arm_offset)
    if net is None or features is None:
        d = np.zeros(N_ERR)
    else:
        d = net.forward(features).as_array()
    w = preview_weights(params.N)
    previews = tuple(DisturbanceVec.from_array(wk * d) for wk in w)
    refs = tuple(trajectory.pose(t + (k + 1) * params.dt) for k in range(params.N))
    return MpcProblem(
        x0=state,
        reference=refs,
        previews=previews,
        params=params,
        ee0=ee,
        u_prev=np.zeros(N_INPUT) if u_prev is None else np.asarray(u_prev, dtype=float).copy(),
        tool_nominal=tuple(tool_nominal),
        current_reference=trajectory.pose(t),
        terminal=bool(trajectory.exhausted(t + params.dt)),
    )


def lag_coefficients(dt: float, tau: float) -> tuple[float, float, float]:
    """Exact first-order lag over one held step: ``(beta, c_u, c_r)``.

    With rate ``r`` relaxing toward the held input ``u``, the next rate is
    ``beta*r + (1-beta)*u`` and the distance covered is ``c_u*u + c_r*r``.
    """
    if tau <= 0.0:
        return 0.0, dt, 0.0
    beta = float(np.exp(-dt / tau))
    c_r = tau * (1.0 - beta)
    return beta, dt - c_r, c_r


def _model(problem: MpcProblem):
    """Affine prediction ``e = E + G U`` for the stacked errors of steps 1..N.

    Chassis rates lag their commands (time constant ``tau_chassis``) starting
    from the measured rates in ``x0.base_vel``; the arm integrates its
    velocity directly.
    """
    p = problem.params
    N, Nc, dt = p.N, p.Nc, p.dt
    st = problem.x0
    Rb = st.base.rotation
    yaw = st.yaw
    h = np.array([np.cos(yaw), np.sin(yaw)])
    l = np.array([-h[1], h[0]])
    n = Rb[:, 2]
    grad = -n[:2] / n[2]  # dz/dxy of the chassis plane
    H0 = np.array([h[0], h[1], grad @ h])
    L0 = np.array([l[0], l[1], grad @ l])
    r = Rb @ (np.asarray(problem.tool_nominal, dtype=float) + st.arm_offset)
    lever = np.cross([0.0, 0.0, 1.0], r)
    nb = Rb.T @ np.array([0.0, 0.0, 1.0])
    v0 = float(problem.u_prev[0])

    S = np.zeros((N, Nc))
    S[np.arange(N), np.minimum(np.arange(N), Nc - 1)] = 1.0
    T = np.tril(np.ones((N, N)))  # sum over j <= row
    Ts = np.tril(np.ones((N, N)), -1)  # sum over j < row
    beta, cu, cr = lag_coefficients(dt, p.tau_chassis)
    j = np.arange(N)
    # realized rate at the start of step j: beta^j r0 + sum_{i<j} (1-beta) beta^(j-1-i) u_i
    Lb = np.where(j[:, None] > j[None, :], (1.0 - beta) * beta ** np.maximum(j[:, None] - 1 - j[None, :], 0), 0.0)
    step_u = (cu * np.eye(N) + cr * Lb) @ S  # per-step advance per input
    step_r0 = cr * beta**j  # per-step advance per initial rate
    adv = T @ step_u  # cumulative advance after k = 1..N steps
    adv_r0 = T @ step_r0
    yaw_at_input = Ts @ step_u  # psi_j - psi0 at the start of step j
    yaw_at_input_r0 = Ts @ step_r0
    arm = dt * T @ S

    G = np.zeros((N, N_ERR, Nc, N_INPUT))
    G[:, :3, :, 0] = -adv[:, None, :] * H0[None, :, None]
    turn = v0 * dt * (T @ yaw_at_input)
    G[:, :3, :, 1] = -(turn[:, None, :] * L0[None, :, None] + adv[:, None, :] * lever[None, :, None])
    G[:, 3:, :, 1] = -adv[:, None, :] * nb[None, :, None]
    for a in range(3):
        G[:, :3, :, 2 + a] = -arm[:, None, :] * Rb[:, a][None, :, None]
    G = G.reshape(N * N_ERR, Nc * N_INPUT)

    vr0, wr0 = st.base_vel
    Rh = rot_z(yaw)
    dcum = np.cumsum(np.array([d.as_array() for d in problem.previews]), axis=0)
    E = np.zeros((N, N_ERR))
    R0t = problem.ee0.rotation.T
    for k, ref in enumerate(problem.reference):
        free_yaw = adv_r0[k] * wr0
        free_pos = adv_r0[k] * vr0 * H0 + v0 * dt * float(np.sum(yaw_at_input_r0[: k + 1])) * wr0 * L0 + free_yaw * lever
        E[k, :3] = ref.position - problem.ee0.position - free_pos - Rh @ dcum[k, :3]
        E[k, 3:] = so3_log(R0t @ ref.rotation) - free_yaw * nb - dcum[k, 3:]
    return E.reshape(-1), G


def _difference_operator(Nc: int, u_prev):
    D = np.eye(Nc * N_INPUT)
    for k in range(1, Nc):
        i = k * N_INPUT
        D[i : i + N_INPUT, i - N_INPUT : i] -= np.eye(N_INPUT)
    c = np.zeros(Nc * N_INPUT)
    c[:N_INPUT] = u_prev
    return D, c


def qp_matrices(problem: MpcProblem):
    """Condensed QP ``0.5 U'HU + f'U`` plus the pieces needed to evaluate the cost."""
    p = problem.params
    E, G = _model(problem)
    qd = np.tile(np.asarray(p.Q, dtype=float), p.N)
    rd = np.tile(np.asarray(p.R, dtype=float), p.Nc)
    D, c = _difference_operator(p.Nc, problem.u_prev)
    H = G.T @ (qd[:, None] * G) + D.T @ (rd[:, None] * D)
    f = G.T @ (qd * E) - D.T @ (rd * c)
    return H, f, (E, G, D, c, qd, rd)


def _cost(U, parts) -> float:
    E, G, D, c, qd, rd = parts
    e = E + G @ U
    du = D @ U - c
    return float(e @ (qd * e) + du @ (rd * du))


def solve(problem: MpcProblem) -> MpcSolution:
    p = problem.params
    t0 = time.perf_counter()
    H, f, parts = qp_matrices(problem)
    ub = np.tile(p.upper, p.Nc)
    lb = -ub
    flagged = False
    try:
        res = solve_box_qp(H, f, lb, ub)
        U, active, iters = res.x, res.active, res.iterations
        flagged = not res.converged
    except (QpError, np.linalg.LinAlgError):
        # saturated fallback: hold the previous command inside the bounds
        U = np.clip(np.tile(problem.u_prev, p.Nc), lb, ub)
        active, iters, flagged = int(np.sum((U == lb) | (U == ub))), 0, True
    E, G = parts[0], parts[1]
    errs = (E + G @ U).reshape(p.N, N_ERR)
    sol = MpcSolution(
        u_seq=U.reshape(p.Nc, N_INPUT),
        predicted_errors=tuple(DisturbanceVec.from_array(e) for e in errs),
        cost=max(0.0, _cost(U, parts)),
        solve_time=time.perf_counter() - t0,
        active_constraints=active,
        flagged=flagged,
        iterations=iters,
    )
    return sol


def zero_input_cost(problem: MpcProblem) -> float:
    _, _, parts = qp_matrices(problem)
    return _cost(np.zeros(problem.params.Nc * N_INPUT), parts)

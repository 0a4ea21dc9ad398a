"""Lower layer: 1 ms kinematic plant and the 100 Hz command executor.

The chassis is a unicycle in the horizontal plane (``v`` is horizontal speed)
whose height and tilt are slaved to the least-squares plane through its four
wheel contacts. Each contact is displaced by an independent wheel-transform
perturbation every plant step. The arm is a task-space integrator inside a
workspace box. Actuators follow their commands through first-order lags.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from terraprint import kernels
from terraprint.core import DisturbanceVec, Pose, RobotState, compose, pose_error, rot_z
from terraprint.mpc.coordination import ArmClamp, FrequencySplitter
from terraprint.terrain import TerrainField, contact_displacements, wheel_noise_batch


@dataclass(frozen=True)
class PlantConfig:
    dt_plant: float = 0.001
    executor_rate: float = 100.0
    mpc_rate: float = 10.0
    wheelbase: float = 1.2
    track: float = 0.8
    wheel_radius: float = 0.15
    arm_box: tuple = (0.3, 0.3, 0.15)
    tau_chassis: float = 0.05
    tau_arm: float = 0.01
    tool_nominal: tuple = (0.5, 0.0, 0.3)
    v_max: float = 1.0
    omega_max: float = 1.0
    arm_vel_max: float = 0.2

    def __post_init__(self):
        for rate in (self.executor_rate, self.mpc_rate):
            n = 1.0 / (rate * self.dt_plant)
            if abs(n - round(n)) > 1e-9 or round(n) < 1:
                raise ValueError(f"dt_plant {self.dt_plant} does not divide the {rate} Hz period")
        if round(self.executor_rate / self.mpc_rate) * self.mpc_rate != self.executor_rate:
            raise ValueError("executor rate must be a multiple of the MPC rate")

    @property
    def steps_per_exec(self) -> int:
        return int(round(1.0 / (self.executor_rate * self.dt_plant)))

    @property
    def execs_per_mpc(self) -> int:
        return int(round(self.executor_rate / self.mpc_rate))

    def params_vector(self, z_offset: float = 0.0) -> np.ndarray:
        ac = 1.0 if self.tau_chassis <= 0 else 1.0 - math.exp(-self.dt_plant / self.tau_chassis)
        aa = 1.0 if self.tau_arm <= 0 else 1.0 - math.exp(-self.dt_plant / self.tau_arm)
        return np.array(
            [self.dt_plant, ac, aa, 0.5 * self.wheelbase, 0.5 * self.track,
             self.arm_box[0], self.arm_box[1], self.arm_box[2], z_offset]
        )


@dataclass(frozen=True)
class GroundTruth:
    state: RobotState
    ee_world: Pose
    injected_disturbance: DisturbanceVec
    base_nominal: Pose
    ee_nominal: Pose
    plane_residual: float = 0.0
    arm_clamps: int = 0
    cmd_saturated: bool = False


def end_effector_pose(state: RobotState, tool_nominal=(0.5, 0.0, 0.3)) -> Pose:
    """``base ∘ (tool_nominal + arm_offset)``."""
    offset = np.asarray(tool_nominal, dtype=float) + state.arm_offset
    return compose(state.base, Pose(offset))


def _pose_from_out(out: np.ndarray, off: int, x: float, y: float) -> Pose:
    return Pose(np.array([x, y, out[off]]), out[off + 1 : off + 10].reshape(3, 3))


class Plant:
    """Stateful wrapper around the compiled step kernel.

    The noise stream is consumed at a fixed rate (4 wheels x 6 normals per
    plant step, plus truncation redraws), so runs sharing a noise seed see the
    same realization regardless of the commands applied.
    """

    def __init__(self, cfg: PlantConfig, field: TerrainField, noise_rng: np.random.Generator,
                 noise_amplitude: float = 0.0, initial: RobotState | None = None):
        self.cfg = cfg
        self.field = field
        self.rng = noise_rng
        self.noise_amplitude = float(noise_amplitude)
        self.z_offset = 0.0
        self.buf = np.zeros(kernels.STATE_LEN)
        self.out = np.zeros(kernels.OUT_LEN)
        self.cmd = np.zeros(5)
        self.noise_hash = hashlib.sha256()
        self.saturation_count = 0
        self.arm_clamp_count = 0
        self.max_residual = 0.0
        self.time = 0.0
        self.steps = 0
        self._tool = np.asarray(cfg.tool_nominal, dtype=float)
        self.reset(initial or RobotState())

    def reset(self, state: RobotState):
        b = self.buf
        b[0], b[1] = state.base.position[0], state.base.position[1]
        b[2] = state.yaw
        b[3], b[4] = state.base_vel
        b[5:8] = state.arm_offset
        b[8:11] = state.arm_vel
        self.time = state.time
        self.steps = int(round(state.time / self.cfg.dt_plant))
        self._run(0)
        self.last = self._ground_truth(False)

    def _noise_block(self, n: int) -> np.ndarray:
        trans, rot = wheel_noise_batch(self.rng, self.noise_amplitude, (n, 4), self.cfg.wheelbase)
        if self.noise_amplitude > 0.0:
            self.noise_hash.update(trans.tobytes())
            self.noise_hash.update(rot.tobytes())
        disp = contact_displacements(trans, rot, self.cfg.wheel_radius)
        return np.ascontiguousarray(disp.reshape(-1))

    def _run(self, n: int):
        noise = self._noise_block(n) if n > 0 else np.zeros(3)
        kernels.advance(self.buf, self.cmd, self.cfg.params_vector(self.z_offset), n, noise,
                        *self.field.kernel_args(), self.out)
        self.max_residual = max(self.max_residual, float(self.out[20]))
        self.arm_clamp_count += int(self.out[21])

    def _ground_truth(self, saturated: bool) -> GroundTruth:
        b, out = self.buf, self.out
        base = _pose_from_out(out, 0, b[0], b[1])
        base_nom = _pose_from_out(out, 10, b[0], b[1])
        state = RobotState(base, (b[3], b[4]), b[5:8].copy(), b[8:11].copy(), self.time)
        offset = Pose(self._tool + b[5:8])
        ee = compose(base, offset)
        ee_nom = compose(base_nom, offset)
        return GroundTruth(state, ee, pose_error(ee, ee_nom), base_nom, ee_nom,
                           float(out[20]), int(out[21]), saturated)

    def set_command(self, chassis_cmd, arm_cmd) -> bool:
        c = self.cfg
        raw = np.array([chassis_cmd[0], chassis_cmd[1], *arm_cmd], dtype=float)
        lim = np.array([c.v_max, c.omega_max, c.arm_vel_max, c.arm_vel_max, c.arm_vel_max])
        self.cmd = np.clip(raw, -lim, lim)
        saturated = bool(np.any(self.cmd != raw))
        self.saturation_count += int(saturated)
        return saturated

    def step(self, chassis_cmd, arm_cmd, n_steps: int = 1) -> GroundTruth:
        """Hold the command for ``n_steps`` plant steps and return the final ground truth."""
        saturated = self.set_command(chassis_cmd, arm_cmd)
        self._run(n_steps)
        self.steps += n_steps
        self.time = self.steps * self.cfg.dt_plant
        self.last = self._ground_truth(saturated)
        return self.last

    @property
    def noise_checksum(self) -> str:
        return self.noise_hash.hexdigest()


def step(state: RobotState, chassis_cmd, arm_cmd, field: TerrainField,
         noise_rng: np.random.Generator, cfg: PlantConfig, noise_amplitude: float = 0.0,
         n_steps: int = 1) -> GroundTruth:
    """Functional single-call form of :meth:`Plant.step`."""
    plant = Plant(cfg, field, noise_rng, noise_amplitude, state)
    return plant.step(chassis_cmd, arm_cmd, n_steps)


def initial_state(field: TerrainField, cfg: PlantConfig, ee_xy, yaw: float = 0.0) -> RobotState:
    """Chassis placed so the tool sits above ``ee_xy`` with zero arm offset."""
    tool = np.asarray(cfg.tool_nominal, dtype=float)
    xy = np.asarray(ee_xy, dtype=float)[:2] - (rot_z(yaw) @ tool)[:2]
    plant = Plant(cfg, field, np.random.default_rng(0), 0.0,
                  RobotState(Pose(np.array([xy[0], xy[1], 0.0]), rot_z(yaw))))
    return plant.last.state


@dataclass
class MpcCommand:
    """Command set published by the MPC loop."""

    t: float
    v: float
    omega: float
    arm_vel: np.ndarray
    arm_start: np.ndarray  # measured arm offset when the command was issued

    @classmethod
    def zero(cls, t: float = 0.0, arm=None) -> "MpcCommand":
        arm = np.zeros(3) if arm is None else np.asarray(arm, dtype=float)
        return cls(t, 0.0, 0.0, np.zeros(3), arm.copy())

    def vector(self) -> np.ndarray:
        return np.array([self.v, self.omega, *self.arm_vel])


@dataclass
class ActuatorCommand:
    v: float
    omega: float
    arm_vel: np.ndarray
    stale: bool = False
    arm_target: np.ndarray = field(default_factory=lambda: np.zeros(3))


class Executor:
    """100 Hz execution of the latest MPC command.

    Per tick: interpolate the MPC command (zero-order hold or linear ramp from
    the previous command), split the commanded arm velocity by frequency
    (the low band of the along-track component is handed to the chassis),
    integrate the arm's share into an offset target kept inside the workspace
    box, and trim the arm toward that target with a proportional gain. Box
    overflow along track is rerouted to the chassis. A command older than
    three MPC periods stops the chassis.
    """

    def __init__(self, cfg: PlantConfig, mode: str = "zoh", split_hz: float = 1.0,
                 trim_gain: float = 20.0, offload: bool = True):
        if mode not in ("zoh", "linear"):
            raise ValueError("mode must be 'zoh' or 'linear'")
        self.cfg = cfg
        self.mode = mode
        self.dt = 1.0 / cfg.executor_rate
        self.period = 1.0 / cfg.mpc_rate
        self.trim_gain = trim_gain
        self.offload = offload
        self.splitter = FrequencySplitter(split_hz, self.dt, 3)
        self.clamp = ArmClamp(cfg.arm_box)
        self.prev: MpcCommand | None = None
        self.current: MpcCommand | None = None
        self.target = np.zeros(3)
        self._target_of: MpcCommand | None = None
        self.stale_count = 0
        # chassis speed added on top of the MPC command, as realized through the chassis lag
        self.extra_lagged = 0.0
        self._extra_decay = math.exp(-self.dt / cfg.tau_chassis) if cfg.tau_chassis > 0 else 0.0

    def publish(self, cmd: MpcCommand):
        self.prev = self.current
        self.current = cmd

    def interpolated(self, t: float) -> np.ndarray:
        cur = self.current.vector()
        if self.mode == "zoh" or self.prev is None:
            return cur
        frac = min(1.0, max(0.0, (t - self.current.t) / self.period))
        prev = self.prev.vector()
        return prev + frac * (cur - prev)

    def tick(self, t: float, arm_meas) -> ActuatorCommand:
        arm_meas = np.asarray(arm_meas, dtype=float)
        if self.current is None:
            self.current = MpcCommand.zero(t, arm_meas)
        age = t - self.current.t
        if age > 3.0 * self.period + 1e-9:
            self.stale_count += 1
            self.extra_lagged *= self._extra_decay
            return ActuatorCommand(0.0, 0.0, np.zeros(3), True, arm_meas.copy())
        if self._target_of is not self.current:
            # a new command re-anchors the arm target at the measurement it was planned from
            self._target_of = self.current
            self.target = np.asarray(self.current.arm_start, dtype=float).copy()
        u = self.interpolated(t)
        arm_share = u[2:].copy()
        v_extra = 0.0
        if self.offload:
            low, _ = self.splitter.step_array(u[2:])
            # only the along-track share is realizable by the chassis
            v_extra = low[0]
            arm_share[0] -= low[0]
        # trim toward where the arm should be now, then advance the target over this tick
        trim = self.trim_gain * (self.target - arm_meas)
        target, overflow = self.clamp.clamp(self.target + arm_share * self.dt)
        self.target = target
        v_extra += overflow[0] / self.dt
        self.extra_lagged = v_extra + (self.extra_lagged - v_extra) * self._extra_decay
        return ActuatorCommand(u[0] + v_extra, u[1], arm_share + trim, False, target.copy())


def executor_tick(mpc_cmd: MpcCommand, state: RobotState, cfg: PlantConfig, t: float,
                  executor: Executor | None = None) -> ActuatorCommand:
    """One executor tick; builds a fresh zero-order-hold executor without offload if none is given."""
    ex = executor or Executor(cfg, offload=False)
    if ex.current is not mpc_cmd:
        ex.publish(mpc_cmd)
    return ex.tick(t, state.arm_offset)

"""Simulated multi-rate sensor suite and fused feature construction.

Channels refresh on their own rate grid (integer milliseconds) and are held
between refreshes. Images are never synthesized: the depth channel emits the
terrain descriptors directly from ground truth plus noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from terraprint.core import Pose, matrix_from_rpy, rpy_from_matrix, so3_exp, so3_log
from terraprint.terrain import TerrainField, query


@dataclass(frozen=True)
class SensorConfig:
    imu_rate: float = 100.0
    vision_rate: float = 30.0
    depth_rate: float = 30.0
    encoder_rate: float = 1000.0
    imu_acc_sigma: float = 0.02  # m/s^2
    imu_gyro_sigma: float = 0.002  # rad/s
    attitude_sigma: float = 0.001  # rad, AHRS attitude estimate
    vision_pos_sigma: float = 0.001  # m
    vision_rot_sigma: float = 0.001  # rad
    depth_height_sigma: float = 0.002  # m
    depth_slope_sigma: float = 0.002
    encoder_sigma: float = 0.0  # m
    lookahead: float = 0.3  # m beyond the front axle
    wheelbase: float = 1.2
    tool_nominal: tuple = (0.5, 0.0, 0.3)

    def noiseless(self) -> "SensorConfig":
        kw = {k: 0.0 for k in self.__dataclass_fields__ if k.endswith("_sigma")}
        return SensorConfig(**{**self.__dict__, **kw})


@dataclass(frozen=True)
class SensorFrame:
    t: float
    imu_acc: np.ndarray
    imu_gyro: np.ndarray
    base_orientation_est: np.ndarray  # roll, pitch, yaw
    ee_pose_meas: Pose
    terrain_ahead: dict
    joint_pos_meas: np.ndarray
    odometry: tuple = (0.0, 0.0)  # wheel-encoder forward speed and yaw rate
    vision_index: int = 0

    @classmethod
    def zero(cls, t: float = 0.0) -> "SensorFrame":
        z = np.zeros(3)
        return cls(t, z, z, z, Pose.identity(), {"height_var": 0.0, "slope_est": (0.0, 0.0)}, z)


BASE_LAYOUT = (
    "imu_acc_x", "imu_acc_y", "imu_acc_z",
    "imu_gyro_x", "imu_gyro_y", "imu_gyro_z",
    "roll", "pitch", "yaw",
    "terrain_height_var",
    "terrain_slope_along", "terrain_slope_lateral",
    "ee_rel_x", "ee_rel_y", "ee_rel_z",
)
EE_ORIENTATION = ("ee_rel_rx", "ee_rel_ry", "ee_rel_rz")
VELOCITY_TERMS = ("base_v", "base_omega")


@dataclass(frozen=True)
class FeatureLayout:
    ee_orientation: bool = False
    velocity_terms: bool = False

    @property
    def names(self) -> tuple:
        names = BASE_LAYOUT
        if self.ee_orientation:
            names = names + EE_ORIENTATION
        if self.velocity_terms:
            names = names + VELOCITY_TERMS
        return names

    @property
    def dim(self) -> int:
        return len(self.names)

    @classmethod
    def from_names(cls, names) -> "FeatureLayout":
        names = tuple(names)
        layout = cls(EE_ORIENTATION[0] in names, VELOCITY_TERMS[0] in names)
        if layout.names != names:
            raise ValueError(f"unrecognized feature layout {names}")
        return layout


def _channel_index(tick_ms: int, rate: float) -> int:
    return (tick_ms * int(round(rate))) // 1000


class SensorSuite:
    """Samples a :class:`~terraprint.plant.GroundTruth` into sensor frames.

    Call :meth:`sample` with nondecreasing times on the 1 ms grid; channels
    only refresh when their rate grid index advances.
    """

    def __init__(self, cfg: SensorConfig, field: TerrainField, rng: np.random.Generator):
        self.cfg = cfg
        self.field = field
        self.rng = rng
        self._idx: dict[str, int] = {}
        self._hold: dict[str, object] = {}
        self._imu_prev = None  # (t, position, velocity, rotation)
        self._last_t = -math.inf

    def _due(self, name: str, tick: int, rate: float) -> bool:
        idx = _channel_index(tick, rate)
        if self._idx.get(name) == idx:
            return False
        self._idx[name] = idx
        return True

    def _noise(self, sigma: float, size=3):
        if sigma <= 0.0:
            return np.zeros(size)
        return self.rng.normal(0.0, sigma, size)

    def sample(self, gt, t: float | None = None) -> SensorFrame:
        cfg = self.cfg
        t = gt.state.time if t is None else t
        if t < self._last_t:
            raise ValueError("sensor sampling time must be nondecreasing")
        self._last_t = t
        tick = int(round(t * 1000.0))
        state = gt.state

        if self._due("imu", tick, cfg.imu_rate):
            self._hold["imu"] = self._imu(gt, t)
        if self._due("vision", tick, cfg.vision_rate):
            ee = gt.ee_world
            if cfg.vision_pos_sigma > 0.0 or cfg.vision_rot_sigma > 0.0:
                ee = Pose(ee.position + self._noise(cfg.vision_pos_sigma),
                          ee.rotation @ so3_exp(self._noise(cfg.vision_rot_sigma)))
            self._hold["vision"] = (ee, self._idx["vision"])
        if self._due("depth", tick, cfg.depth_rate):
            self._hold["depth"] = self._depth(state)
        if self._due("encoder", tick, cfg.encoder_rate):
            self._hold["encoder"] = (state.arm_offset + self._noise(cfg.encoder_sigma), state.base_vel)

        acc, gyro, att = self._hold["imu"]
        ee_meas, vidx = self._hold["vision"]
        arm, odom = self._hold["encoder"]
        return SensorFrame(t, acc, gyro, att, ee_meas, self._hold["depth"], arm, odom, vidx)

    def _imu(self, gt, t: float):
        cfg = self.cfg
        R = gt.base_nominal.rotation
        p = gt.base_nominal.position
        acc = np.zeros(3)
        gyro = np.zeros(3)
        vel = None
        if self._imu_prev is not None:
            # finite differences of the noise-free chassis motion over one IMU period
            t0, p0, v0, R0 = self._imu_prev
            dt = t - t0
            vel = (p - p0) / dt
            gyro = so3_log(R0.T @ R) / dt
            if v0 is not None:
                acc = R.T @ ((vel - v0) / dt)
        self._imu_prev = (t, p.copy(), vel, R.copy())
        att = rpy_from_matrix(R)
        return (acc + self._noise(cfg.imu_acc_sigma),
                gyro + self._noise(cfg.imu_gyro_sigma),
                att + self._noise(cfg.attitude_sigma))

    def _depth(self, state) -> dict:
        cfg = self.cfg
        base = state.base
        yaw = state.yaw
        h = np.array([math.cos(yaw), math.sin(yaw)])
        lat = np.array([-h[1], h[0]])
        dist = 0.5 * cfg.wheelbase + cfg.lookahead
        pt = base.position[:2] + dist * h
        s = query(self.field, pt[0], pt[1])
        n = base.rotation[:, 2]
        # chassis contact plane extrapolated to the look-ahead point
        plane_z = base.position[2] - (n[0] * (pt[0] - base.position[0]) + n[1] * (pt[1] - base.position[1])) / n[2]
        g = np.array(s.gradient, dtype=float)
        slope = np.array([g @ h, g @ lat]) + self._noise(cfg.depth_slope_sigma, 2)
        height_var = float(s.height - plane_z) + float(self._noise(cfg.depth_height_sigma, 1)[0])
        return {"height_var": height_var, "slope_est": (float(slope[0]), float(slope[1]))}


def sample_sensors(suite: SensorSuite, gt, t: float | None = None) -> SensorFrame:
    return suite.sample(gt, t)


def extract_features(frame: SensorFrame, state=None, layout: FeatureLayout = FeatureLayout(),
                     tool_nominal=(0.5, 0.0, 0.3)) -> np.ndarray:
    """Deterministic map of a frame into the fixed feature layout (raw units).

    An all-zero frame (see :meth:`SensorFrame.zero`) maps to all zeros when
    ``tool_nominal`` is zero; the end-effector terms are positions relative to
    the chassis, i.e. ``tool_nominal + joint_pos_meas``.
    """
    ta = frame.terrain_ahead
    parts = [
        frame.imu_acc,
        frame.imu_gyro,
        frame.base_orientation_est,
        [ta["height_var"]],
        ta["slope_est"],
        np.asarray(tool_nominal, dtype=float) + frame.joint_pos_meas,
    ]
    if layout.ee_orientation:
        R_base = matrix_from_rpy(frame.base_orientation_est)
        parts.append(so3_log(R_base.T @ frame.ee_pose_meas.rotation))
    if layout.velocity_terms:
        odom = state.base_vel if state is not None else frame.odometry
        parts.append(odom)
    return np.concatenate([np.asarray(p, dtype=float).reshape(-1) for p in parts])


class EndEffectorEstimator:
    """Fuses 30 Hz vision with encoder, odometry and IMU increments.

    Attitude comes from a complementary filter: the previous estimate is
    propagated with the gyro and pulled toward the AHRS attitude with
    ``attitude_gain`` per update. Between vision frames the position is
    propagated with the kinematic change implied by wheel odometry, the arm
    encoders and the attitude; a fresh vision frame pulls the estimate toward
    the measurement with ``gain``.
    """

    def __init__(self, tool_nominal=(0.5, 0.0, 0.3), gain: float = 0.3, attitude_gain: float = 0.05):
        self.tool = np.asarray(tool_nominal, dtype=float)
        self.gain = gain
        self.attitude_gain = attitude_gain
        self.position: np.ndarray | None = None
        self.rotation = np.eye(3)
        self._model_prev = None
        self._vision_idx = None
        self._t = None
        self._base_xy = np.zeros(2)

    def _attitude(self, frame: SensorFrame, dt: float | None) -> np.ndarray:
        R_meas = matrix_from_rpy(frame.base_orientation_est)
        if dt is None:
            return R_meas
        R_pred = self.rotation @ so3_exp(frame.imu_gyro * dt)
        return R_pred @ so3_exp(self.attitude_gain * so3_log(R_pred.T @ R_meas))

    def update(self, frame: SensorFrame) -> Pose:
        dt = None if self._t is None else frame.t - self._t
        R = self._attitude(frame, dt)
        if dt is not None:
            yaw_mid = math.atan2(R[1, 0] + self.rotation[1, 0], R[0, 0] + self.rotation[0, 0])
            v = frame.odometry[0]
            self._base_xy = self._base_xy + dt * v * np.array([math.cos(yaw_mid), math.sin(yaw_mid)])
        self._t = frame.t
        n = R[:, 2]
        lever = R @ (self.tool + frame.joint_pos_meas)
        model = np.array([self._base_xy[0], self._base_xy[1], 0.0]) + lever
        if self.position is None:
            self.position = frame.ee_pose_meas.position.copy()
            self._model_prev = (model, self._base_xy.copy())
            self._vision_idx = frame.vision_index
        else:
            prev_model, prev_xy = self._model_prev
            d_xy = self._base_xy - prev_xy
            dz_plane = -(n[0] * d_xy[0] + n[1] * d_xy[1]) / n[2]
            inc = model - prev_model
            inc[2] += dz_plane
            self.position = self.position + inc
            self._model_prev = (model, self._base_xy.copy())
            if frame.vision_index != self._vision_idx:
                self._vision_idx = frame.vision_index
                self.position = self.position + self.gain * (frame.ee_pose_meas.position - self.position)
        self.rotation = R
        return Pose(self.position.copy(), R)

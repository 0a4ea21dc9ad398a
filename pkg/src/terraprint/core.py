"""Geometric and state types shared by every layer of the stack.

Conventions
-----------
* World frame is z-up. Positions are meters, angles radians.
* A :class:`Pose` maps points from its own frame into the parent frame:
  ``p_parent = R @ p_local + position``.
* Orientation is stored as a 3x3 rotation matrix. Serialization is always the
  4x4 homogeneous matrix in row-major order.
* Rotation errors are small-angle rotation vectors (the so(3) log map).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ARM_Z_LIMIT = 0.15  # m, vertical compensation range of the manipulator


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def skew(w) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def so3_exp(w) -> np.ndarray:
    """Rodrigues formula, exact for any angle."""
    w = np.asarray(w, dtype=float)
    theta = math.sqrt(float(w @ w))
    K = skew(w)
    if theta < 1e-8:
        # second-order Taylor keeps orthonormality to ~1e-16 here
        return np.eye(3) + K + 0.5 * K @ K
    return (
        np.eye(3)
        + (math.sin(theta) / theta) * K
        + ((1.0 - math.cos(theta)) / theta**2) * K @ K
    )


def so3_log(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    cos_t = max(-1.0, min(1.0, 0.5 * (np.trace(R) - 1.0)))
    theta = math.acos(cos_t)
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-6:
        return 0.5 * v
    if math.pi - theta < 1e-6:
        # near pi: axis from the symmetric part
        B = 0.5 * (R + np.eye(3))
        axis = np.sqrt(np.clip(np.diag(B), 0.0, None))
        k = int(np.argmax(axis))
        axis = B[k] / axis[k]
        return theta * axis / np.linalg.norm(axis)
    return theta / (2.0 * math.sin(theta)) * v


def orthonormalize(R) -> np.ndarray:
    """Project onto SO(3) (closest rotation in Frobenius norm)."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=float))
    Rn = U @ Vt
    if np.linalg.det(Rn) < 0:
        U[:, -1] *= -1
        Rn = U @ Vt
    return Rn


def rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rpy_from_matrix(R) -> np.ndarray:
    """ZYX Euler angles (roll, pitch, yaw) of ``R = Rz(yaw) Ry(pitch) Rx(roll)``."""
    R = np.asarray(R)
    pitch = -math.asin(max(-1.0, min(1.0, R[2, 0])))
    roll = math.atan2(R[2, 1], R[2, 2])
    yaw = math.atan2(R[1, 0], R[0, 0])
    return np.array([roll, pitch, yaw])


def matrix_from_rpy(rpy) -> np.ndarray:
    r, p, y = rpy
    cr, sr = math.cos(r), math.sin(r)
    cp, sp = math.cos(p), math.sin(p)
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    Ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    return rot_z(y) @ Ry @ Rx


@dataclass(frozen=True)
class Pose:
    position: np.ndarray = field(default_factory=lambda: _frozen(np.zeros(3)))
    rotation: np.ndarray = field(default_factory=lambda: _frozen(np.eye(3)))

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(R))):
            raise ValueError("pose entries must be finite")
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9 or np.linalg.det(R) < 0:
            raise ValueError("rotation is not orthonormal within 1e-9")
        object.__setattr__(self, "position", _frozen(p))
        object.__setattr__(self, "rotation", _frozen(R))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_translation(cls, x: float, y: float, z: float) -> "Pose":
        return cls(np.array([x, y, z], dtype=float))

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float).reshape(4, 4)
        return cls(T[:3, 3].copy(), orthonormalize(T[:3, :3]))

    @classmethod
    def from_vector(cls, dp, dr) -> "Pose":
        """Translation ``dp`` and rotation vector ``dr`` (exp map)."""
        return cls(np.asarray(dp, dtype=float), so3_exp(dr))

    def to_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.position
        return T

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(-Rt @ self.position, Rt)

    def transform_point(self, p) -> np.ndarray:
        return self.rotation @ np.asarray(p, dtype=float) + self.position

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def to_json(self) -> dict:
        return {"T": [float(v) for v in self.to_matrix().reshape(-1)]}

    @classmethod
    def from_json(cls, obj: dict) -> "Pose":
        T = obj["T"]
        if len(T) != 16:
            raise ValueError("pose JSON needs 16 row-major entries")
        return cls.from_matrix(np.array(T, dtype=float).reshape(4, 4))


def compose(a: Pose, b: Pose) -> Pose:
    """``a ∘ b``: apply ``b`` first, then ``a``."""
    R = a.rotation @ b.rotation
    # re-normalize only when rounding drift is measurable; keeps identity exact
    if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-12:
        R = orthonormalize(R)
    return Pose(a.rotation @ b.position + a.position, R)


@dataclass(frozen=True)
class DisturbanceVec:
    """6-DOF perturbation: position part ``dp`` (m), rotation vector ``dr`` (rad)."""

    dp: np.ndarray = field(default_factory=lambda: _frozen(np.zeros(3)))
    dr: np.ndarray = field(default_factory=lambda: _frozen(np.zeros(3)))

    def __post_init__(self):
        dp = np.asarray(self.dp, dtype=float).reshape(3)
        dr = np.asarray(self.dr, dtype=float).reshape(3)
        if not (np.all(np.isfinite(dp)) and np.all(np.isfinite(dr))):
            raise ValueError("disturbance entries must be finite")
        object.__setattr__(self, "dp", _frozen(dp))
        object.__setattr__(self, "dr", _frozen(dr))

    @classmethod
    def zero(cls) -> "DisturbanceVec":
        return cls()

    @classmethod
    def from_array(cls, v) -> "DisturbanceVec":
        v = np.asarray(v, dtype=float).reshape(6)
        return cls(v[:3], v[3:])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.dp, self.dr])

    def within_envelope(self, z_limit: float = ARM_Z_LIMIT) -> bool:
        return abs(float(self.dp[2])) <= z_limit

    def __add__(self, other: "DisturbanceVec") -> "DisturbanceVec":
        return DisturbanceVec(self.dp + other.dp, self.dr + other.dr)

    def __sub__(self, other: "DisturbanceVec") -> "DisturbanceVec":
        return DisturbanceVec(self.dp - other.dp, self.dr - other.dr)

    def __neg__(self) -> "DisturbanceVec":
        return DisturbanceVec(-self.dp, -self.dr)

    def scaled(self, k: float) -> "DisturbanceVec":
        return DisturbanceVec(k * self.dp, k * self.dr)

    def to_json(self) -> dict:
        return {"dp": [float(v) for v in self.dp], "dr": [float(v) for v in self.dr]}

    @classmethod
    def from_json(cls, obj: dict) -> "DisturbanceVec":
        return cls(np.array(obj["dp"], dtype=float), np.array(obj["dr"], dtype=float))


def pose_error(target: Pose, actual: Pose) -> DisturbanceVec:
    """Tracking error of ``actual`` against ``target``.

    ``dp`` is the world-frame position difference. ``dr`` is the rotation
    vector of ``actual.R^T target.R``, i.e. the rotation still to be applied
    in the actual (body) frame to reach the target.
    """
    dp = target.position - actual.position
    dr = so3_log(actual.rotation.T @ target.rotation)
    return DisturbanceVec(dp, dr)


@dataclass(frozen=True)
class RobotState:
    """Plant state stepped at the 1 ms rate.

    ``base_vel`` holds the actuated (lagged) forward speed and yaw rate.
    ``arm_offset``/``arm_vel`` are expressed in the chassis frame.
    """

    base: Pose = field(default_factory=Pose.identity)
    base_vel: tuple = (0.0, 0.0)
    arm_offset: np.ndarray = field(default_factory=lambda: _frozen(np.zeros(3)))
    arm_vel: np.ndarray = field(default_factory=lambda: _frozen(np.zeros(3)))
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "base_vel", (float(self.base_vel[0]), float(self.base_vel[1])))
        object.__setattr__(self, "arm_offset", _frozen(np.asarray(self.arm_offset).reshape(3)))
        object.__setattr__(self, "arm_vel", _frozen(np.asarray(self.arm_vel).reshape(3)))
        if abs(float(self.arm_offset[2])) > ARM_Z_LIMIT + 1e-12:
            raise ValueError(f"arm z offset {self.arm_offset[2]:.4f} m outside ±{ARM_Z_LIMIT} m")

    @property
    def yaw(self) -> float:
        R = self.base.rotation
        return math.atan2(R[1, 0], R[0, 0])

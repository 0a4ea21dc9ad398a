"""Chassis/manipulator coordination by frequency decomposition.

The correction signal is split with a first-order low-pass: the low band goes
to the chassis, the complementary remainder to the arm. Because the arm share
is computed as ``input - chassis_share`` the two always sum to the input
exactly.
"""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from terraprint.core import DisturbanceVec


class FrequencySplitter:
    """Streaming complementary split at ``split_hz`` for a signal sampled every ``dt``.

    The low-pass pole is mapped exactly, ``alpha = exp(-2*pi*f_c*dt)``, giving
    ``y[k] = alpha*y[k-1] + (1-alpha)*x[k]``. The first sample initializes the
    filter state to zero so a DC input converges with the continuous time
    constant.
    """

    def __init__(self, split_hz: float = 1.0, dt: float = 0.01, width: int = 6):
        if split_hz <= 0.0 or dt <= 0.0:
            raise ValueError("split_hz and dt must be positive")
        self.split_hz = split_hz
        self.dt = dt
        self.alpha = math.exp(-2.0 * math.pi * split_hz * dt)
        self.state = np.zeros(width)

    def reset(self, value=None):
        self.state = np.zeros_like(self.state) if value is None else np.array(value, dtype=float)

    def step_array(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        low = self.alpha * self.state + (1.0 - self.alpha) * x
        self.state = low
        return low, x - low

    def step(self, total: DisturbanceVec) -> tuple[DisturbanceVec, DisturbanceVec]:
        low, high = self.step_array(total.as_array())
        return DisturbanceVec.from_array(low), DisturbanceVec.from_array(high)


def decompose_command(
    stream: Iterable[DisturbanceVec] | np.ndarray, split_hz: float = 1.0, dt: float = 0.1
) -> tuple[np.ndarray, np.ndarray]:
    """Split a whole correction stream; returns ``(chassis_share, arm_share)`` arrays (n, 6)."""
    rows = [s.as_array() if isinstance(s, DisturbanceVec) else np.asarray(s, dtype=float) for s in stream]
    X = np.array(rows, dtype=float).reshape(len(rows), -1)
    splitter = FrequencySplitter(split_hz, dt, X.shape[1])
    low = np.empty_like(X)
    high = np.empty_like(X)
    for k in range(X.shape[0]):
        low[k], high[k] = splitter.step_array(X[k])
    return low, high


class ArmClamp:
    """Keeps arm offset requests inside the workspace box and counts overflow."""

    def __init__(self, box=(0.3, 0.3, 0.15)):
        self.box = np.asarray(box, dtype=float)
        self.reroute_count = 0
        self.rerouted_total = np.zeros(3)

    def clamp(self, request) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(clamped, overflow)`` with ``overflow = request - clamped``."""
        request = np.asarray(request, dtype=float)
        clamped = np.clip(request, -self.box, self.box)
        overflow = request - clamped
        if np.any(overflow != 0.0):
            self.reroute_count += 1
            self.rerouted_total = self.rerouted_total + np.abs(overflow)
        return clamped, overflow


def clamp_arm(arm_share, box=(0.3, 0.3, 0.15)) -> tuple[np.ndarray, np.ndarray]:
    return ArmClamp(box).clamp(arm_share)

"""Upper layer: piecewise-linear path segmentation and velocity planning.

Waypoints are ``[x, y, z]`` where ``z`` is the print height above the local
terrain. Segments follow the terrain: a segment whose span crosses a terrain
gradient change of more than 1° is split (at its worst chord deviation) until
the chord stays within ``chord_tol`` of the terrain-following height.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from terraprint.core import Pose, so3_exp, so3_log
from terraprint.terrain import TerrainField, query

GRADIENT_CHANGE = math.radians(1.0)
MIN_SEGMENT = 1e-3  # m
CORNER_ANGLE = math.radians(10.0)


@dataclass(frozen=True)
class PathSegment:
    p0: Pose
    pf: Pose
    length: float
    v_max: float
    terrain_class_hint: str = "flat"

    def __post_init__(self):
        if self.v_max <= 0.0:
            raise ValueError("segment v_max must be positive")

    @property
    def direction(self) -> np.ndarray:
        d = self.pf.position - self.p0.position
        n = np.linalg.norm(d)
        return d / n if n > 0 else np.zeros(3)


@dataclass(frozen=True)
class PathPlan:
    segments: tuple
    total_length: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["segment", "p0_x", "p0_y", "p0_z", "pf_x", "pf_y", "pf_z", "v_max"])
            for i, seg in enumerate(self.segments):
                w.writerow([i, *map(repr, map(float, seg.p0.position)),
                            *map(repr, map(float, seg.pf.position)), repr(float(seg.v_max))])


def _frame_at(field: TerrainField, xy, heading_xy) -> np.ndarray:
    """Tool orientation: z along the terrain normal, x along the path heading."""
    s = query(field, xy[0], xy[1])
    gx, gy = s.gradient
    n = np.array([-gx, -gy, 1.0])
    n /= np.linalg.norm(n)
    h = np.array([heading_xy[0], heading_xy[1], 0.0])
    if np.linalg.norm(h) == 0.0:
        h = np.array([1.0, 0.0, 0.0])
    x = h - (h @ n) * n
    x /= np.linalg.norm(x)
    y = np.cross(n, x)
    return np.column_stack([x, y, n])


def _terrain_hint(field: TerrainField, a_xy, b_xy) -> str:
    if field.kind in ("rough", "mixed"):
        return field.kind
    if field.slope_active:
        xs = (a_xy[0], b_xy[0])
        return "slope" if max(xs) > field.slope_start else "flat"
    return "flat"


def _split_points(field: TerrainField, a, b, chord_tol: float, triggered: bool = False) -> list:
    """Recursive chord subdivision in horizontal parameter space; returns interior split points.

    A span is only split when it crosses a gradient change above the
    threshold; once split, its pieces are refined until the chord tolerance
    holds.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    L = float(np.hypot(*(b[:2] - a[:2])))
    if L < 2.0 * MIN_SEGMENT:
        return []
    n = max(16, int(math.ceil(L / 0.01)))
    i = np.arange(n + 1)
    s = i / n
    xs = a[0] + (b[0] - a[0]) * s
    ys = a[1] + (b[1] - a[1]) * s
    follow = field.heights(xs, ys) + a[2] + (b[2] - a[2]) * s
    dirn = (b[:2] - a[:2]) / L
    slopes = []
    for x, y in ((xs[0], ys[0]), (xs[-1], ys[-1])):
        g = query(field, x, y).gradient
        slopes.append(g[0] * dirn[0] + g[1] * dirn[1])
    # interior directional slopes from the sampled profile
    slopes.extend(np.diff(follow - (a[2] + (b[2] - a[2]) * s)) / (L / n))
    angles = np.arctan(np.asarray(slopes))
    if not triggered and float(np.max(angles) - np.min(angles)) <= GRADIENT_CHANGE:
        return []
    chord = follow[0] + (follow[-1] - follow[0]) * s
    dev = np.abs(chord - follow)
    if float(np.max(dev)) <= chord_tol:
        return []
    k = int(np.argmax(dev[1:-1])) + 1
    mid = np.array([xs[k], ys[k], a[2] + (b[2] - a[2]) * s[k]])
    return _split_points(field, a, mid, chord_tol, True) + [mid] + _split_points(field, mid, b, chord_tol, True)


def segment_path(waypoints: Sequence, chord_tol: float, field: TerrainField,
                 v_max: float = 0.35) -> PathPlan:
    """Turn waypoints into a C0 chain of terrain-following linear segments."""
    pts = [np.asarray(w.position if isinstance(w, Pose) else w, dtype=float).reshape(3) for w in waypoints]
    if len(pts) < 2:
        raise ValueError("segment_path needs at least 2 waypoints")
    if chord_tol <= 0.0:
        raise ValueError("chord_tol must be positive")
    dense = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        dense.extend(_split_points(field, a, b, chord_tol))
        dense.append(b)
    # drop zero-length hops
    verts = [dense[0]]
    for p in dense[1:]:
        if np.hypot(*(p[:2] - verts[-1][:2])) > 0.0 or p[2] != verts[-1][2]:
            verts.append(p)
    if len(verts) < 2:
        verts.append(verts[0])
    world = [np.array([p[0], p[1], field.height(p[0], p[1]) + p[2]]) for p in verts]
    poses = []
    for i, p in enumerate(world):
        j = i if i + 1 < len(world) else i - 1
        heading = world[j + 1][:2] - world[j][:2]
        poses.append(Pose(p, _frame_at(field, p[:2], heading)))
    segs = []
    for i in range(len(poses) - 1):
        p0, pf = poses[i], poses[i + 1]
        length = float(np.linalg.norm(pf.position - p0.position))
        segs.append(PathSegment(p0, pf, length, v_max, _terrain_hint(field, verts[i], verts[i + 1])))
    return PathPlan(tuple(segs), float(sum(s.length for s in segs)))


def eval_segment(seg: PathSegment, s: float) -> Pose:
    """Linear position interpolation, spherical orientation interpolation."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"segment parameter s={s} outside [0, 1]")
    if s == 1.0:
        return seg.pf
    pos = (1.0 - s) * seg.p0.position + s * seg.pf.position
    R0 = seg.p0.rotation
    R = R0 @ so3_exp(s * so3_log(R0.T @ seg.pf.rotation))
    return Pose(pos, R)


@dataclass(frozen=True)
class SegmentProfile:
    """Trapezoidal ``s(t)`` over one segment."""

    t0: float
    length: float
    v_entry: float
    v_peak: float
    v_exit: float
    accel: float

    @property
    def t_acc(self) -> float:
        return (self.v_peak - self.v_entry) / self.accel if self.length > 0 else 0.0

    @property
    def t_dec(self) -> float:
        return (self.v_peak - self.v_exit) / self.accel if self.length > 0 else 0.0

    @property
    def t_cruise(self) -> float:
        if self.length <= 0.0:
            return 0.0
        d_acc = (self.v_peak**2 - self.v_entry**2) / (2 * self.accel)
        d_dec = (self.v_peak**2 - self.v_exit**2) / (2 * self.accel)
        return max(0.0, self.length - d_acc - d_dec) / self.v_peak

    @property
    def duration(self) -> float:
        return self.t_acc + self.t_cruise + self.t_dec

    def distance(self, tau: float) -> float:
        """Distance travelled ``tau`` seconds into the segment."""
        if self.length <= 0.0:
            return 0.0
        tau = min(max(tau, 0.0), self.duration)
        a, u0, vp = self.accel, self.v_entry, self.v_peak
        ta, tc = self.t_acc, self.t_cruise
        if tau <= ta:
            return u0 * tau + 0.5 * a * tau * tau
        d = u0 * ta + 0.5 * a * ta * ta
        if tau <= ta + tc:
            return d + vp * (tau - ta)
        d += vp * tc
        r = tau - ta - tc
        return min(self.length, d + vp * r - 0.5 * a * r * r)

    def s_at(self, tau: float) -> float:
        return 1.0 if self.length <= 0.0 else min(1.0, self.distance(tau) / self.length)

    def speed(self, tau: float) -> float:
        if self.length <= 0.0 or tau < 0.0 or tau > self.duration:
            return 0.0
        ta, tc = self.t_acc, self.t_cruise
        if tau <= ta:
            return self.v_entry + self.accel * tau
        if tau <= ta + tc:
            return self.v_peak
        return self.v_peak - self.accel * (tau - ta - tc)


def _trapezoid(t0, L, u0, u1, vmax, a) -> SegmentProfile:
    if L <= 0.0:
        return SegmentProfile(t0, 0.0, 0.0, 0.0, 0.0, a)
    vp = min(vmax, math.sqrt((2.0 * a * L + u0 * u0 + u1 * u1) / 2.0))
    vp = max(vp, u0, u1)
    return SegmentProfile(t0, L, u0, vp, u1, a)


def plan_velocity(plan: PathPlan, limits: dict, t_start: float = 0.0) -> list:
    """Per-segment trapezoids: ``v = 0`` at the plan ends and at sharp corners.

    Segments hinted ``rough`` or ``mixed`` run at half ``v_max``.
    """
    v_lim, a = float(limits["v_max"]), float(limits["a_max"])
    if v_lim <= 0.0 or a <= 0.0:
        raise ValueError("velocity limits must be positive")
    segs = plan.segments
    caps = []
    for seg in segs:
        cap = min(v_lim, seg.v_max)
        if seg.terrain_class_hint in ("rough", "mixed"):
            cap *= 0.5
        caps.append(cap)
    n = len(segs)
    junction = [0.0] * (n + 1)
    for i in range(1, n):
        d0, d1 = segs[i - 1].direction, segs[i].direction
        turn = math.acos(max(-1.0, min(1.0, float(d0[:2] @ d1[:2]) /
                                       max(1e-12, np.linalg.norm(d0[:2]) * np.linalg.norm(d1[:2])))))
        junction[i] = 0.0 if turn > CORNER_ANGLE else min(caps[i - 1], caps[i])
    for i in range(n):  # forward pass: reachable from the entry speed
        junction[i + 1] = min(junction[i + 1], math.sqrt(junction[i] ** 2 + 2 * a * segs[i].length))
    for i in range(n - 1, -1, -1):  # backward pass: can stop in time
        junction[i] = min(junction[i], math.sqrt(junction[i + 1] ** 2 + 2 * a * segs[i].length))
    profiles = []
    t = t_start
    for i, seg in enumerate(segs):
        prof = _trapezoid(t, seg.length, junction[i], junction[i + 1], caps[i], a)
        profiles.append(prof)
        t += prof.duration
    return profiles


class Trajectory:
    """Time-indexed reference built from a plan and its profiles; holds the final pose."""

    def __init__(self, plan: PathPlan, profiles: list):
        self.plan = plan
        self.profiles = profiles
        self.t_end = profiles[-1].t0 + profiles[-1].duration if profiles else 0.0

    def locate(self, t: float) -> tuple[int, float]:
        for i, prof in enumerate(self.profiles):
            if t < prof.t0 + prof.duration:
                return i, prof.s_at(t - prof.t0)
        return len(self.profiles) - 1, 1.0

    def pose(self, t: float) -> Pose:
        i, s = self.locate(t)
        return eval_segment(self.plan.segments[i], s)

    def speed(self, t: float) -> float:
        i, _ = self.locate(t)
        prof = self.profiles[i]
        return prof.speed(t - prof.t0)

    def exhausted(self, t: float) -> bool:
        return t >= self.t_end

"""Procedural terrain fields and wheel-level noise injection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from terraprint import kernels
from terraprint.core import Pose

KINDS = ("flat", "slope", "rough", "mixed")
MAX_CUTOFF = 0.5  # cycles/m, terrain spatial-frequency envelope
MAX_SLOPE = math.radians(15.0)
N_COMPONENTS = 16


class TerrainConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TerrainSample:
    height: float
    gradient: tuple


@dataclass(frozen=True)
class TerrainField:
    """Immutable height field: optional planar incline plus band-limited roughness.

    The incline starts at ``x = slope_start`` and rises along +x. Roughness is
    a sum of random-phase 2-D sinusoids whose wave-vector magnitudes lie below
    ``roughness_cutoff``; ``roughness_amplitude`` is the RMS height.
    """

    kind: str = "flat"
    slope_angle: float = 0.0
    slope_start: float = 5.0
    roughness_amplitude: float = 0.0
    roughness_cutoff: float = 0.3
    seed: int = 0
    kx: np.ndarray = field(init=False, repr=False, compare=False)
    ky: np.ndarray = field(init=False, repr=False, compare=False)
    amp: np.ndarray = field(init=False, repr=False, compare=False)
    phase: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise TerrainConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not 0.0 <= self.slope_angle <= MAX_SLOPE + 1e-12:
            raise TerrainConfigError("slope_angle must lie in [0, 15] degrees")
        if self.roughness_amplitude < 0.0:
            raise TerrainConfigError("roughness amplitude must be >= 0")
        if self.roughness_cutoff > MAX_CUTOFF:
            raise TerrainConfigError(
                f"roughness cutoff {self.roughness_cutoff} cycles/m exceeds the "
                f"{MAX_CUTOFF} cycles/m terrain envelope"
            )
        if self.roughness_cutoff <= 0.0 and self.rough_active:
            raise TerrainConfigError("roughness cutoff must be > 0")
        kx, ky, amp, phase = _roughness_components(
            self.seed, self.roughness_amplitude if self.rough_active else 0.0, self.roughness_cutoff
        )
        for name, arr in (("kx", kx), ("ky", ky), ("amp", amp), ("phase", phase)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def slope_active(self) -> bool:
        return self.kind in ("slope", "mixed") and self.slope_angle > 0.0

    @property
    def rough_active(self) -> bool:
        return self.kind in ("rough", "mixed") and self.roughness_amplitude > 0.0

    @property
    def slope_tan(self) -> float:
        return math.tan(self.slope_angle) if self.slope_active else 0.0

    def kernel_args(self) -> tuple:
        return (self.slope_tan, float(self.slope_start), self.kx, self.ky, self.amp, self.phase)

    def height(self, x: float, y: float) -> float:
        return kernels.terrain_height(float(x), float(y), *self.kernel_args())

    def heights(self, xs, ys) -> np.ndarray:
        """Vectorized height, used by the planner and the spectral tests."""
        xs = np.asarray(xs, dtype=float)
        ys = np.broadcast_to(np.asarray(ys, dtype=float), xs.shape)
        h = np.zeros_like(xs)
        if self.slope_active:
            h += np.where(xs >= self.slope_start, (xs - self.slope_start) * self.slope_tan, 0.0)
        for i in range(self.amp.shape[0]):
            h += self.amp[i] * np.sin(2.0 * np.pi * (self.kx[i] * xs + self.ky[i] * ys) + self.phase[i])
        return h

    def max_gradient(self) -> float:
        g = self.slope_tan
        g += float(np.sum(2.0 * np.pi * self.amp * np.hypot(self.kx, self.ky)))
        return g

    def to_config(self) -> dict:
        return {
            "kind": self.kind,
            "slope_deg": math.degrees(self.slope_angle),
            "slope_start_m": self.slope_start,
            "rough_amp_mm": self.roughness_amplitude * 1e3,
            "rough_cutoff_cpm": self.roughness_cutoff,
            "seed": self.seed,
        }


def _roughness_components(seed: int, rms: float, cutoff: float):
    if rms <= 0.0:
        z = np.zeros(0)
        return z, z.copy(), z.copy(), z.copy()
    rng = np.random.default_rng(seed)
    f = rng.uniform(0.2 * cutoff, cutoff, N_COMPONENTS)
    theta = rng.uniform(0.0, 2.0 * np.pi, N_COMPONENTS)
    phase = rng.uniform(0.0, 2.0 * np.pi, N_COMPONENTS)
    w = 1.0 / f  # red spectrum: longer wavelengths carry more height
    amp = w * rms / math.sqrt(0.5 * float(np.sum(w * w)))
    return f * np.cos(theta), f * np.sin(theta), amp, phase


# Table-1-like classes. Amplitudes only preserve the difficulty ordering.
# ``texture_mm`` is the wheel-level noise amplitude a loose surface adds on
# top of the band-limited height field; it is consumed by the terrain battery.
TERRAIN_CLASSES: dict[str, dict] = {
    "flat": {"kind": "flat"},
    "slope": {"kind": "slope", "slope_deg": 5.0},
    "grass": {"kind": "rough", "rough_amp_mm": 6.0, "rough_cutoff_cpm": 0.3, "texture_mm": 2.5},
    "mixed": {"kind": "mixed", "slope_deg": 5.0, "rough_amp_mm": 6.0, "rough_cutoff_cpm": 0.3, "texture_mm": 2.5},
    "gravel": {"kind": "rough", "rough_amp_mm": 8.0, "rough_cutoff_cpm": 0.5, "texture_mm": 4.0},
}


def build_scenario(config: Mapping) -> TerrainField:
    """Build a field from a config section (keys as in the scenario file).

    Recognized keys: kind, slope_deg, slope_start_m, rough_amp_mm,
    rough_cutoff_cpm, seed. Violations raise :class:`TerrainConfigError`.
    """
    kind = str(config.get("kind", "flat"))
    try:
        slope_deg = float(config.get("slope_deg", 0.0))
        cutoff = float(config.get("rough_cutoff_cpm", 0.3))
        amp_mm = float(config.get("rough_amp_mm", 0.0))
        start = float(config.get("slope_start_m", 5.0))
        seed = int(config.get("seed", 0))
    except (TypeError, ValueError) as exc:
        raise TerrainConfigError(f"bad terrain value: {exc}") from None
    if not 0.0 <= slope_deg <= 15.0:
        raise TerrainConfigError(f"slope_deg {slope_deg} outside [0, 15]")
    return TerrainField(
        kind=kind,
        slope_angle=math.radians(slope_deg),
        slope_start=start,
        roughness_amplitude=amp_mm * 1e-3,
        roughness_cutoff=cutoff,
        seed=seed,
    )


def terrain_class(name: str, seed: int = 0, slope_start: float = 5.0) -> TerrainField:
    if name not in TERRAIN_CLASSES:
        raise TerrainConfigError(f"unknown terrain class {name!r}")
    cfg = dict(TERRAIN_CLASSES[name], seed=seed, slope_start_m=slope_start)
    cfg.pop("texture_mm", None)
    return build_scenario(cfg)


def reference_scenario(seed: int = 0) -> TerrainField:
    """Flat for x < 5 m, 5° incline beyond."""
    return build_scenario({"kind": "slope", "slope_deg": 5.0, "slope_start_m": 5.0, "seed": seed})


def query(field: TerrainField, x: float, y: float) -> TerrainSample:
    h, gx, gy = kernels.terrain_eval(float(x), float(y), *field.kernel_args())
    return TerrainSample(h, (gx, gy))


def _truncated_normal(rng: np.random.Generator, sigma: float, bound: float, shape) -> np.ndarray:
    out = rng.normal(0.0, sigma, shape)
    bad = np.abs(out) > bound
    while np.any(bad):
        out[bad] = rng.normal(0.0, sigma, int(bad.sum()))
        bad = np.abs(out) > bound
    return out


def wheel_noise_batch(rng: np.random.Generator, amplitude: float, shape, wheelbase: float = 1.2):
    """Draw wheel perturbations: arrays of translations and rotation vectors.

    Translation axes: Gaussian with sigma = amplitude/3, redrawn outside
    ±amplitude. Rotation axes: sigma = (amplitude/3)/wheelbase, truncated at
    ±amplitude/wheelbase.
    """
    shape = tuple(np.atleast_1d(shape)) + (3,)
    if amplitude <= 0.0:
        return np.zeros(shape), np.zeros(shape)
    sigma = amplitude / 3.0
    trans = _truncated_normal(rng, sigma, amplitude, shape)
    rot = _truncated_normal(rng, sigma / wheelbase, amplitude / wheelbase, shape)
    return trans, rot


def wheel_noise(rng: np.random.Generator, amplitude: float, wheelbase: float = 1.2) -> Pose:
    """One wheel-transform perturbation as a :class:`Pose`."""
    trans, rot = wheel_noise_batch(rng, amplitude, 1, wheelbase)
    return Pose.from_vector(trans[0], rot[0])


def contact_displacements(trans: np.ndarray, rot: np.ndarray, wheel_radius: float) -> np.ndarray:
    """Displacement of the contact point below a wheel hub under the perturbations.

    The contact sits at ``(0, 0, -r)`` in the hub frame; the perturbed contact
    is ``t + R(rot) (0, 0, -r)``.
    """
    theta = np.linalg.norm(rot, axis=-1, keepdims=True)
    safe = np.where(theta > 0.0, theta, 1.0)
    k = rot / safe
    v = np.array([0.0, 0.0, -wheel_radius])
    kv = k @ v
    kxv = np.cross(k, v)
    Rv = v * np.cos(theta) + kxv * np.sin(theta) + k * kv[..., None] * (1.0 - np.cos(theta))
    return trans + Rv - v

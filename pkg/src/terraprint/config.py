"""Flat ``key = value`` scenario files.

Sections are key prefixes (``terrain.kind``, ``seeds.noise``). ``#`` starts a
comment. The raw text is kept so reports can echo it verbatim.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from terraprint.mpc.controller import MpcParams
from terraprint.terrain import TerrainConfigError, build_scenario


class ConfigError(ValueError):
    """Field-level configuration problem."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


SEED_KEYS = ("terrain", "noise", "sensors", "training")
PREDICTOR_SOURCES = ("zero", "train-first")


def parse_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}", "empty key")
        if key in out:
            raise ConfigError(key, f"duplicate key on line {lineno}")
        out[key] = value
    return out


def section(values: dict, prefix: str) -> dict:
    p = prefix + "."
    return {k[len(p):]: v for k, v in values.items() if k.startswith(p)}


def _float(values, key, default=None):
    if key not in values:
        if default is None:
            raise ConfigError(key, "missing")
        return float(default)
    try:
        x = float(values[key])
    except ValueError:
        raise ConfigError(key, f"not a number: {values[key]!r}") from None
    if not math.isfinite(x):
        raise ConfigError(key, "must be finite")
    return x


def _int(values, key, default=None):
    x = _float(values, key, default)
    if x != int(x):
        raise ConfigError(key, f"must be an integer, got {values[key]!r}")
    return int(x)


def _bool(values, key, default=False):
    if key not in values:
        return default
    v = values[key].lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(key, f"not a boolean: {values[key]!r}")


def _floats(values, key, n=None):
    try:
        xs = tuple(float(s) for s in values[key].split(","))
    except ValueError:
        raise ConfigError(key, f"bad number list {values[key]!r}") from None
    if n is not None and len(xs) != n:
        raise ConfigError(key, f"expected {n} values, got {len(xs)}")
    return xs


def _waypoints(values, key="path.waypoints"):
    if key not in values:
        raise ConfigError(key, "missing")
    pts = []
    for chunk in values[key].split(";"):
        try:
            p = tuple(float(s) for s in chunk.split(","))
        except ValueError:
            raise ConfigError(key, f"bad waypoint {chunk.strip()!r}") from None
        if len(p) != 3:
            raise ConfigError(key, f"waypoint {chunk.strip()!r} needs x,y,z")
        pts.append(p)
    if len(pts) < 2:
        raise ConfigError(key, "need at least 2 waypoints")
    return tuple(pts)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    terrain: dict
    waypoints: tuple
    chord_tol: float
    v_max: float
    a_max: float
    mpc: MpcParams
    predictor: str
    noise_amplitude: float
    duration: float
    seeds: dict
    out_dir: str | None = None
    executor_mode: str = "zoh"
    split_hz: float = 1.0
    trim_gain: float = 20.0
    estimator_gain: float = 0.3
    velocity_terms: bool = True
    ee_orientation: bool = False
    sensor_noise: bool = True
    step_time: float | None = None
    step_dz: float = 0.0
    replan_period: float = 10.0
    train_trajectories: int = 40
    train_duration: float = 20.0
    train_epochs: int = 30
    train_lr: float = 0.002
    train_batch: int = 64
    stlsq_threshold: float = 0.05
    stlsq_ridge: float = 1e-3
    raw: str = field(default="", compare=False)
    values: dict = field(default_factory=dict, compare=False)

    def with_overrides(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)


def from_values(values: dict, raw: str = "") -> ScenarioConfig:
    seeds = {}
    for k in SEED_KEYS:
        key = f"seeds.{k}"
        if key not in values:
            raise ConfigError(key, "missing (all seeds must be explicit)")
        seeds[k] = _int(values, key)
    duration = _float(values, "duration_s")
    if duration <= 0.0:
        raise ConfigError("duration_s", "must be > 0")
    if abs(duration * 10 - round(duration * 10)) > 1e-9:
        raise ConfigError("duration_s", "must be a multiple of the 0.1 s MPC period")
    source = values.get("predictor.source", "zero")
    if source not in PREDICTOR_SOURCES and not source.endswith(".json"):
        raise ConfigError("predictor.source", f"must be zero, train-first or a .json path, got {source!r}")
    mode = values.get("executor.mode", "zoh")
    if mode not in ("zoh", "linear"):
        raise ConfigError("executor.mode", "must be zoh or linear")
    noise = _float(values, "noise.amplitude_mm", 0.0)
    if noise < 0.0:
        raise ConfigError("noise.amplitude_mm", "must be >= 0")
    chord = _float(values, "path.chord_tol_mm", 2.0)
    if chord <= 0.0:
        raise ConfigError("path.chord_tol_mm", "must be > 0")
    v_max, a_max = _float(values, "path.v_max", 0.35), _float(values, "path.a_max", 0.25)
    if v_max <= 0.0 or a_max <= 0.0:
        raise ConfigError("path.v_max" if v_max <= 0.0 else "path.a_max", "must be > 0")
    try:
        mpc = MpcParams(
            N=_int(values, "mpc.N", 10),
            Nc=_int(values, "mpc.Nc", 5),
            dt=_float(values, "mpc.dt", 0.1),
            Q=_floats(values, "mpc.Q", 6) if "mpc.Q" in values else MpcParams.Q,
            R=_floats(values, "mpc.R", 5) if "mpc.R" in values else MpcParams.R,
            v_max=_float(values, "mpc.v_max", 1.0),
            omega_max=_float(values, "mpc.omega_max", 1.0),
            arm_vel_max=_float(values, "mpc.arm_vel_max", 0.2),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("mpc", str(exc)) from None
    if abs(mpc.dt - 0.1) > 1e-12:
        raise ConfigError("mpc.dt", "the MPC runs at 10 Hz; dt must be 0.1")
    step_time = _float(values, "event.step_time_s", float("nan")) if "event.step_time_s" in values else None
    terrain = section(values, "terrain")
    terrain.setdefault("seed", str(seeds["terrain"]))
    try:
        build_scenario(terrain)
    except TerrainConfigError as exc:
        raise ConfigError("terrain", str(exc)) from None
    return ScenarioConfig(
        name=values.get("name", "scenario"),
        terrain=terrain,
        waypoints=_waypoints(values),
        chord_tol=chord * 1e-3,
        v_max=v_max,
        a_max=a_max,
        mpc=mpc,
        predictor=source,
        noise_amplitude=noise * 1e-3,
        duration=duration,
        seeds=seeds,
        out_dir=values.get("output.dir"),
        executor_mode=mode,
        split_hz=_float(values, "executor.split_hz", 1.0),
        trim_gain=_float(values, "executor.trim_gain", 20.0),
        estimator_gain=_float(values, "estimator.vision_gain", 0.3),
        velocity_terms=_bool(values, "predictor.velocity_terms", True),
        ee_orientation=_bool(values, "predictor.ee_orientation", False),
        sensor_noise=_bool(values, "sensors.noise", True),
        step_time=step_time,
        step_dz=_float(values, "event.step_dz_mm", 0.0) * 1e-3,
        replan_period=_float(values, "planner.replan_s", 10.0),
        train_trajectories=_int(values, "training.trajectories", 40),
        train_duration=_float(values, "training.duration_s", 20.0),
        train_epochs=_int(values, "training.epochs", 30),
        train_lr=_float(values, "training.lr", 0.002),
        train_batch=_int(values, "training.batch", 64),
        stlsq_threshold=_float(values, "training.stlsq_threshold", 0.05),
        stlsq_ridge=_float(values, "training.stlsq_ridge", 1e-3),
        raw=raw,
        values=dict(values),
    )


def apply_overrides(values: dict, overrides) -> dict:
    out = dict(values)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(item, "override must be KEY=VALUE")
        k, v = (s.strip() for s in item.split("=", 1))
        out[k] = v
    return out


def load(path, overrides=()) -> ScenarioConfig:
    path = Path(path)
    try:
        raw = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc.strerror}") from None
    values = apply_overrides(parse_text(raw), overrides)
    return from_values(values, raw)


def loads(text: str, overrides=()) -> ScenarioConfig:
    return from_values(apply_overrides(parse_text(text), overrides), text)


def scenario_dir() -> Path:
    return Path(__file__).parent / "scenarios"

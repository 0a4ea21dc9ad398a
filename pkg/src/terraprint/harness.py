"""Scenario runner: wires planner, predictor, MPC, executor, plant and sensors.

Timing of one run (all in simulation time, the plant is the clock):

* every 10 s the path is re-segmented against the terrain,
* every 0.1 s the MPC builds and solves a problem and publishes a command,
* every 10 ms the executor produces actuator commands, the plant advances
  10 steps of 1 ms, sensors are sampled and the error logs get a row.

Wall-clock quantities (solve times, predictor latency) are kept apart from
the deterministic logs so two runs with the same seeds give byte-identical
``report.json`` and CSV files.
"""

from __future__ import annotations

import csv
import json
import math
import platform
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from terraprint import kernels
from terraprint.config import ConfigError, ScenarioConfig
from terraprint.core import Pose, RobotState, pose_error, rot_z, rpy_from_matrix, matrix_from_rpy, so3_log
from terraprint.mpc.controller import build_problem, solve
from terraprint.planner import Trajectory, plan_velocity, segment_path
from terraprint.plant import Executor, MpcCommand, Plant, PlantConfig, initial_state
from terraprint.predictor import (PredictorNet, TrajectoryDataset, TrajectoryRecord, load_predictor,
                                  select_features, train)
from terraprint.sensors import (EndEffectorEstimator, FeatureLayout, SensorConfig, SensorSuite,
                                extract_features)
from terraprint.terrain import TERRAIN_CLASSES, build_scenario, terrain_class

from terraprint import __version__

TRANSIENT = 1.0  # s excluded from the error statistics
DRIFT_START = 5.0  # s
SETTLE_BAND = 1e-3  # m
SETTLE_HOLD = 0.2  # s
LOG_DT = 0.01
PREDICT_STEPS = 25  # 0.5 s at 50 Hz
BATTERY = ("flat", "slope", "grass", "mixed", "gravel")

ERROR_COLS = ("t", "ref_x", "ref_y", "ref_z", "e_x", "e_y", "e_z", "e_rx", "e_ry", "e_rz")
MPC_COLS = ("t", *(f"e0_{a}" for a in ("x", "y", "z", "rx", "ry", "rz")),
            *(f"dhat_{a}" for a in ("x", "y", "z", "rx", "ry", "rz")),
            "u_v", "u_omega", "u_ax", "u_ay", "u_az", "cost", "active_constraints", "flagged")
GT_COLS = ("t", "base_x", "base_y", "base_z", "base_roll", "base_pitch", "base_yaw",
           "arm_x", "arm_y", "arm_z", "ee_x", "ee_y", "ee_z", "ee_rx", "ee_ry", "ee_rz",
           "dist_x", "dist_y", "dist_z", "dist_rx", "dist_ry", "dist_rz")


class ReportError(RuntimeError):
    pass


# -- disturbance targets ----------------------------------------------------

def _wrap(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def residual_disturbance(g0, g1, tool, steps: int = 5) -> np.ndarray:
    """Per-MPC-step end-effector change over ``[t0, t1]`` not explained by the planar model.

    The model moves the base along its current contact plane, yaws the tool
    lever and applies the arm motion. Whatever else happened (terrain shape
    under the wheels) is the learnable disturbance. Position is returned in
    the heading frame, rotation in the body frame.
    """
    tool = np.asarray(tool, dtype=float)
    b0, b1 = g0.base_nominal, g1.base_nominal
    R0, R1 = b0.rotation, b1.rotation
    yaw0 = g0.state.yaw
    dpsi = _wrap(g1.state.yaw - yaw0)
    arm0, arm1 = g0.state.arm_offset, g1.state.arm_offset
    n = R0[:, 2]
    grad = -n[:2] / n[2]
    dxy = b1.position[:2] - b0.position[:2]
    model = (np.array([dxy[0], dxy[1], grad @ dxy]) + rot_z(dpsi) @ R0 @ (tool + arm1) - R0 @ (tool + arm0))
    actual = (b1.position + R1 @ (tool + arm1)) - (b0.position + R0 @ (tool + arm0))
    dp = rot_z(yaw0).T @ (actual - model)
    dr = so3_log(R0.T @ R1) - dpsi * (R0.T @ np.array([0.0, 0.0, 1.0]))
    return np.concatenate([dp, dr]) / steps


# -- reports ----------------------------------------------------------------

@dataclass
class RunReport:
    name: str
    stats: dict
    counters: dict
    settling: dict
    predictor: dict
    feature_layout: list
    noise_checksum: str
    plan: dict
    config_text: str
    config: dict
    versions: dict

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "RunReport":
        return cls(**obj)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n"


@dataclass
class RunResult:
    report: RunReport
    errors: np.ndarray  # rows of ERROR_COLS
    mpc: np.ndarray
    groundtruth: np.ndarray
    timing: dict
    solve_times: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _axis_stats(x_mm: np.ndarray) -> dict:
    a = np.abs(x_mm)
    if a.size == 0:
        return {"mean": None, "std": None, "max": None, "p95": None}
    return {"mean": float(np.mean(a)), "std": float(np.std(a)), "max": float(np.max(a)),
            "p95": float(np.percentile(a, 95))}


def settling_time(t: np.ndarray, e_z: np.ndarray, t_event: float, band: float = SETTLE_BAND,
                  hold: float = SETTLE_HOLD) -> float | None:
    """Time after ``t_event`` until ``|e_z| < band`` holds for ``hold`` seconds."""
    after = t >= t_event - 1e-9
    ts, ez = t[after], np.abs(e_z[after])
    n_hold = int(round(hold / LOG_DT))
    inside = ez < band
    for i in range(ts.size - n_hold):
        if inside[i : i + n_hold + 1].all():
            return float(ts[i] - t_event)
    return None


def compute_stats(errors: np.ndarray, duration: float, constant_z_spans=(), transition=None) -> dict:
    """Error statistics from the logged error table (columns as :data:`ERROR_COLS`)."""
    t = errors[:, 0]
    e = errors[:, 4:10]
    keep = t >= TRANSIENT - 1e-9
    mm = e[keep, :3] * 1e3
    norm = np.linalg.norm(mm, axis=1)
    stats = {axis: _axis_stats(mm[:, i]) for i, axis in enumerate(("x", "y", "z"))}
    stats["rot_mrad"] = {axis: _axis_stats(e[keep, 3 + i] * 1e3) for i, axis in enumerate(("rx", "ry", "rz"))}
    stats["mean_norm_mm"] = float(np.mean(norm)) if norm.size else None
    stats["max_norm_mm"] = float(np.max(norm)) if norm.size else None
    stats["max_axis_mm"] = float(np.max(np.abs(mm))) if mm.size else None
    stats["height_deviation_mm"] = float(np.mean(np.abs(mm[:, 2]))) if mm.size else None
    win = (t >= DRIFT_START - 1e-9) & (t <= duration + 1e-9)
    if np.count_nonzero(win) >= 2:
        nrm = np.linalg.norm(e[win, :3] * 1e3, axis=1)
        stats["drift_slope_mm_s"] = float(np.polyfit(t[win], nrm, 1)[0])
    else:
        stats["drift_slope_mm_s"] = None
    z_sel = np.zeros_like(keep)
    for lo, hi in constant_z_spans:
        z_sel |= (t >= lo) & (t <= hi)
    z_sel &= keep
    stats["layer_height_sigma_mm"] = float(np.std(e[z_sel, 2] * 1e3)) if np.any(z_sel) else None
    if transition is not None:
        lo, hi = transition
        sel = (errors[:, 1] >= lo) & (errors[:, 1] <= hi) & keep
        stats["transition_max_mm"] = float(np.max(np.linalg.norm(e[sel, :3] * 1e3, axis=1))) if np.any(sel) else None
    return stats


# -- predictor resolution ---------------------------------------------------

_TRAINED: dict = {}


def _layout(cfg: ScenarioConfig) -> FeatureLayout:
    return FeatureLayout(cfg.ee_orientation, cfg.velocity_terms)


def generate_dataset(cfg: ScenarioConfig) -> TrajectoryDataset:
    """Open-loop random traverses over all terrain classes, sampled at 50 Hz.

    Each traverse drives piecewise-constant random speed and turn-rate
    commands (plus a slow random arm motion) for ``train_duration`` seconds.
    Targets are :func:`residual_disturbance` 0.5 s ahead.
    """
    pc = PlantConfig()
    layout = _layout(cfg)
    tool = np.asarray(pc.tool_nominal)
    scfg = SensorConfig() if cfg.sensor_noise else SensorConfig().noiseless()
    n_ticks = int(round(cfg.train_duration / LOG_DT))
    classes = list(TERRAIN_CLASSES)
    trajs = []
    for i in range(cfg.train_trajectories):
        rng = np.random.default_rng([cfg.seeds["training"], i])
        field = terrain_class(classes[i % len(classes)], seed=int(rng.integers(1 << 31)),
                              slope_start=float(rng.uniform(1.0, 5.0)))
        state = initial_state(field, pc, (float(rng.uniform(-1.0, 1.0)), float(rng.uniform(-1.0, 1.0))),
                              float(rng.uniform(-0.2, 0.2)))
        plant = Plant(pc, field, np.random.default_rng([cfg.seeds["noise"], 1000 + i]), cfg.noise_amplitude, state)
        suite = SensorSuite(scfg, field, np.random.default_rng([cfg.seeds["sensors"], 1000 + i]))
        feats, gts, times = [], [], []
        gt = plant.last
        frame = suite.sample(gt, 0.0)
        v = om = 0.0
        arm_v = np.zeros(3)
        for k in range(n_ticks):
            if k % 200 == 0:
                v = float(rng.uniform(0.08, 0.4))
                om = float(rng.uniform(-0.06, 0.06))
            if k % 50 == 0:
                arm = gt.state.arm_offset
                arm_v = np.clip(rng.uniform(-0.02, 0.02, 3) - 0.5 * arm, -0.02, 0.02)
            if k % 2 == 0:
                feats.append(extract_features(frame, None, layout, tool))
                gts.append(gt)
                times.append(plant.time)
            gt = plant.step((v, om), arm_v, pc.steps_per_exec)
            frame = suite.sample(gt, plant.time)
        n = len(gts) - PREDICT_STEPS
        targets = np.array([residual_disturbance(gts[j], gts[j + PREDICT_STEPS], tool) for j in range(n)])
        trajs.append(TrajectoryRecord(i, np.array(times[:n]), np.array(feats[:n]), targets))
    return TrajectoryDataset(trajs, layout.names)


def _training_key(cfg: ScenarioConfig) -> tuple:
    return (cfg.seeds["training"], cfg.seeds["noise"], cfg.seeds["sensors"], cfg.noise_amplitude,
            cfg.sensor_noise, cfg.velocity_terms, cfg.ee_orientation, cfg.train_trajectories,
            cfg.train_duration, cfg.train_epochs, cfg.train_lr, cfg.train_batch, cfg.stlsq_threshold,
            cfg.stlsq_ridge)


def train_predictor(cfg: ScenarioConfig, dataset: TrajectoryDataset | None = None):
    """STLSQ channel selection followed by net training; cached per training settings."""
    key = _training_key(cfg)
    if dataset is None and key in _TRAINED:
        return _TRAINED[key]
    data = dataset or generate_dataset(cfg)
    data.split(cfg.seeds["training"])
    mask = select_features(data, cfg.stlsq_threshold, cfg.stlsq_ridge)
    res = train(data, {"lr": cfg.train_lr, "epochs": cfg.train_epochs, "batch": cfg.train_batch,
                       "seed": cfg.seeds["training"]}, mask=mask)
    info = {
        "source": "train-first",
        "selected_features": [n for n, m in zip(data.layout, mask) if m],
        "train_loss": res.train_loss,
        "val_loss": res.val_loss,
        "n_trajectories": len(data.trajectories),
        "train_ids": list(data.train_ids),
        "val_ids": list(data.val_ids),
    }
    out = (res.net, info)
    if dataset is None:
        _TRAINED[key] = out
    return out


def resolve_predictor(cfg: ScenarioConfig):
    if cfg.predictor == "zero":
        return None, {"source": "zero"}
    if cfg.predictor == "train-first":
        return train_predictor(cfg)
    try:
        net = load_predictor(cfg.predictor)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError("predictor.source", f"cannot load {cfg.predictor!r}: {exc}") from None
    if tuple(net.layout) and tuple(net.layout) != _layout(cfg).names:
        raise ConfigError("predictor.source", f"predictor layout {net.layout} does not match the configured features")
    return net, {"source": cfg.predictor, "selected_features": [n for n, m in zip(net.layout, net.feature_mask) if m]}


# -- closed loop -------------------------------------------------------------

def _plan(cfg: ScenarioConfig, field):
    plan = segment_path(cfg.waypoints, cfg.chord_tol, field, v_max=cfg.v_max)
    profiles = plan_velocity(plan, {"v_max": cfg.v_max, "a_max": cfg.a_max})
    return plan, profiles


def _constant_z_spans(plan, profiles) -> list:
    spans = []
    for seg, prof in zip(plan.segments, profiles):
        if abs(seg.pf.position[2] - seg.p0.position[2]) < 1e-9 and prof.duration > 0.0:
            spans.append((prof.t0, prof.t0 + prof.duration))
    return spans


def run_scenario(cfg: ScenarioConfig, net=None, predictor_info=None, realtime: bool = False) -> RunResult:
    """Run the full loop for ``cfg.duration`` seconds; deterministic per seeds."""
    wall0 = time.perf_counter()
    if net is None and predictor_info is None:
        net, predictor_info = resolve_predictor(cfg)
    predictor_info = dict(predictor_info or {"source": "zero" if net is None else "given"})
    field = build_scenario(cfg.terrain)
    plan, profiles = _plan(cfg, field)
    traj = Trajectory(plan, profiles)
    pc = PlantConfig()
    tool = np.asarray(pc.tool_nominal)
    start = traj.pose(0.0)
    d0 = plan.segments[0].direction
    yaw0 = math.atan2(d0[1], d0[0]) if np.hypot(d0[0], d0[1]) > 0 else 0.0
    plant = Plant(pc, field, np.random.default_rng(cfg.seeds["noise"]), cfg.noise_amplitude,
                  initial_state(field, pc, start.position[:2], yaw0))
    scfg = SensorConfig() if cfg.sensor_noise else SensorConfig().noiseless()
    suite = SensorSuite(scfg, field, np.random.default_rng(cfg.seeds["sensors"]))
    est = EndEffectorEstimator(tool, cfg.estimator_gain)
    executor = Executor(pc, cfg.executor_mode, cfg.split_hz, cfg.trim_gain)
    layout = _layout(cfg)
    params = cfg.mpc

    gt = plant.last
    frame = suite.sample(gt, 0.0)
    ee_est = est.update(frame)
    n_mpc = int(round(cfg.duration / params.dt))
    per_mpc = pc.execs_per_mpc
    step_tick = None if cfg.step_time is None else int(round(cfg.step_time / LOG_DT))
    next_replan = cfg.replan_period
    u_prev = np.zeros(5)
    err_rows, mpc_rows, gt_rows = [], [], []
    solve_times, latencies = [], []
    flagged = replans = 0

    for k in range(n_mpc):
        t = k / 10.0
        if cfg.replan_period > 0 and t >= next_replan - 1e-9:
            new_plan, new_profiles = _plan(cfg, field)
            traj = Trajectory(new_plan, new_profiles)
            next_replan += cfg.replan_period
            replans += 1
        R_est = ee_est.rotation
        base_est = Pose(ee_est.position - R_est @ (tool + frame.joint_pos_meas), R_est)
        # the MPC owns the chassis rate minus the share the executor offloaded from the arm
        rates = (frame.odometry[0] - executor.extra_lagged, frame.odometry[1])
        x0 = RobotState(base_est, rates, np.clip(frame.joint_pos_meas, -0.15, 0.15), np.zeros(3), t)
        feats = None
        tl = time.perf_counter()
        if net is not None:
            feats = extract_features(frame, None, layout, tool)
        problem = build_problem(x0, traj, t, net, feats, params, ee=ee_est, u_prev=u_prev, tool_nominal=tool)
        latencies.append(time.perf_counter() - tl)
        sol = solve(problem)
        solve_times.append(sol.solve_time)
        flagged += int(sol.flagged)
        u = sol.u0.copy()
        u_prev = u
        executor.publish(MpcCommand(t, float(u[0]), float(u[1]), u[2:].copy(), frame.joint_pos_meas.copy()))
        e0 = problem.current_error.as_array()
        mpc_rows.append([t, *e0, *problem.previews[0].as_array(), *u, sol.cost,
                         float(sol.active_constraints), float(sol.flagged)])
        for i in range(per_mpc):
            tick = k * per_mpc + i
            te = tick / 100.0
            act = executor.tick(te, frame.joint_pos_meas)
            if step_tick is not None and tick == step_tick:
                plant.z_offset = cfg.step_dz
            gt = plant.step((act.v, act.omega), act.arm_vel, pc.steps_per_exec)
            t_now = (tick + 1) / 100.0
            frame = suite.sample(gt, t_now)
            ee_est = est.update(frame)
            ref = traj.pose(t_now)
            e = pose_error(ref, gt.ee_world).as_array()
            err_rows.append([t_now, *ref.position, *e])
            st = gt.state
            ee = gt.ee_world
            gt_rows.append([t_now, *st.base.position, *rpy_from_matrix(st.base.rotation), *st.arm_offset,
                            *ee.position, *so3_log(ee.rotation), *gt.injected_disturbance.as_array()])
        if realtime:
            lag = (k + 1) / 10.0 - (time.perf_counter() - wall0)
            if lag > 0:
                time.sleep(lag)

    errors = np.array(err_rows)
    spans = _constant_z_spans(plan, profiles)
    transition = None
    if field.slope_active:
        transition = (field.slope_start - 1.0, field.slope_start + 1.0)
    stats = compute_stats(errors, cfg.duration, spans, transition)
    settling = {"protocol": f"persistent {cfg.step_dz * 1e3:g} mm chassis z offset at t={cfg.step_time} s; "
                            f"settled when |e_z| < {SETTLE_BAND * 1e3:g} mm for {SETTLE_HOLD} s"
                if cfg.step_time is not None else None,
                "time_s": settling_time(errors[:, 0], errors[:, 6], cfg.step_time)
                if cfg.step_time is not None else None}
    counters = {
        "stale_commands": executor.stale_count,
        "saturations": plant.saturation_count,
        "arm_reroutes": executor.clamp.reroute_count,
        "plant_arm_clamps": plant.arm_clamp_count,
        "qp_flagged": flagged,
        "replans": replans,
        "max_plane_residual_m": plant.max_residual,
    }
    predictor_info.setdefault("selected_features", None)
    report = RunReport(
        name=cfg.name,
        stats=stats,
        counters=counters,
        settling=settling,
        predictor=predictor_info,
        feature_layout=list(layout.names),
        noise_checksum=plant.noise_checksum,
        plan={"segments": len(plan.segments), "total_length_m": plan.total_length, "duration_s": traj.t_end},
        config_text=cfg.raw,
        config=dict(cfg.values),
        versions={"terraprint": __version__, "numpy": np.__version__, "python": platform.python_version(),
                  "kernel_backend": kernels.BACKEND},
    )
    st_arr = np.array(solve_times)
    timing = {
        "solve_time_mean_s": float(st_arr.mean()),
        "solve_time_max_s": float(st_arr.max()),
        "solve_time_p95_s": float(np.percentile(st_arr, 95)),
        "predictor_latency_mean_s": float(np.mean(latencies)),
        "wall_time_s": time.perf_counter() - wall0,
    }
    return RunResult(report, errors, np.array(mpc_rows), np.array(gt_rows), timing, st_arr)


# -- experiments ----------------------------------------------------------------

def run_ablation(cfg: ScenarioConfig) -> dict:
    """Predictive vs reactive on identical seeds; returns both results and the margin."""
    net, info = resolve_predictor(cfg if cfg.predictor != "zero" else replace(cfg, predictor="train-first"))
    pred = run_scenario(cfg, net, info)
    reac = run_scenario(replace(cfg, predictor="zero"), None, {"source": "zero"})
    mp = pred.report.stats["mean_norm_mm"]
    mr = reac.report.stats["mean_norm_mm"]
    return {
        "predictive": pred,
        "reactive": reac,
        "mean_norm_predictive_mm": mp,
        "mean_norm_reactive_mm": mr,
        "margin_mm": mr - mp,
        "paired_noise": pred.report.noise_checksum == reac.report.noise_checksum,
    }


def battery_config(cfg: ScenarioConfig, name: str) -> ScenarioConfig:
    """Same scenario with the terrain swapped for a class preset.

    The scenario's wheel noise is replaced by the class surface texture, so
    only loose surfaces add wheel-level noise.
    """
    start = cfg.terrain.get("slope_start_m", "5.0")
    preset = dict(TERRAIN_CLASSES[name])
    texture = preset.pop("texture_mm", 0.0)
    terrain = {k: str(v) for k, v in preset.items()}
    terrain.update(seed=str(cfg.seeds["terrain"]), slope_start_m=str(start))
    out = replace(cfg, name=f"{cfg.name}-{name}", terrain=terrain, noise_amplitude=texture * 1e-3)
    # slower classes must still cover the whole path
    _, profiles = _plan(out, build_scenario(terrain))
    t_end = profiles[-1].t0 + profiles[-1].duration
    duration = max(cfg.duration, math.ceil(t_end * 10.0) / 10.0 + 1.0)
    duration = round(duration, 1)
    values = dict(cfg.values, **{f"terrain.{k}": v for k, v in terrain.items()})
    values.update({"duration_s": repr(duration), "noise.amplitude_mm": repr(float(texture))})
    return replace(out, duration=duration, values=values)


def run_terrain_battery(cfg: ScenarioConfig) -> dict:
    net, info = resolve_predictor(cfg)
    results = {name: run_scenario(battery_config(cfg, name), net, info) for name in BATTERY}
    dev = [results[n].report.stats["height_deviation_mm"] for n in BATTERY]
    ordered = dev[0] < dev[1] and all(a <= b for a, b in zip(dev[1:-1], dev[2:]))
    return {"results": results, "height_deviation_mm": dict(zip(BATTERY, dev)), "ordered": bool(ordered),
            "stale_commands": sum(r.report.counters["stale_commands"] for r in results.values())}


# -- output -----------------------------------------------------------------------

def _write_csv(path: Path, cols, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in rows:
            w.writerow([repr(float(x)) for x in row])


def emit_report(result: RunResult, directory) -> Path:
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
        (d / "report.json").write_text(result.report.dumps())
        _write_csv(d / "errors.csv", ERROR_COLS, result.errors)
        _write_csv(d / "mpc.csv", MPC_COLS, result.mpc)
        _write_csv(d / "groundtruth.csv", GT_COLS, result.groundtruth)
        (d / "timing.json").write_text(json.dumps(result.timing, indent=1, sort_keys=True) + "\n")
        _write_csv(d / "timing.csv", ("mpc_tick", "solve_time_s"),
                   [(i, s) for i, s in enumerate(result.solve_times)])
    except OSError as exc:
        raise ReportError(f"cannot write report to {d}: {exc.strerror or exc}") from None
    return d


def read_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array(rows[1:], dtype=float)


def load_report(directory) -> RunReport:
    return RunReport.from_json(json.loads((Path(directory) / "report.json").read_text()))

"""The eleven acceptance criteria, each at its stated tolerance.

Every test records one pass/fail line; the lines are printed together in the
"acceptance criteria" section of the pytest terminal summary.
"""

import math
import time

import numpy as np

import oracles
from conftest import ACCEPTANCE_LINES, WALL_TIMES
from helpers import random_problem
from terraprint import config, harness
from terraprint.mpc import MpcParams, decompose_command, solve
from terraprint.predictor import PredictorNet, loss_and_grads, numerical_gradient_check, stlsq


def record(num: int, title: str, ok: bool, detail: str) -> bool:
    ACCEPTANCE_LINES[f"{num:02d}"] = f"[{'PASS' if ok else 'FAIL'}] {num:2d}. {title}: {detail}"
    return ok


def test_01_tracking_error_below_5mm(ref_run):
    s = ref_run.report.stats
    axes = {a: s[a]["max"] for a in "xyz"}
    wall = WALL_TIMES.get("training", float("nan")) + ref_run.timing["wall_time_s"]
    ok = all(v < 5.0 for v in axes.values())
    record(1, "max per-axis error after 1 s < 5 mm", ok,
           " ".join(f"{a}={v:.3f}" for a, v in axes.items()) + f" mm (train+run {wall:.0f} s, target < 60 s)")
    assert ok


def test_02_no_drift(ref_run):
    slope = ref_run.report.stats["drift_slope_mm_s"]
    ok = abs(slope) < 0.05
    record(2, "|slope of |e| vs t| over 5-30 s < 0.05 mm/s", ok, f"{slope:+.5f} mm/s")
    assert ok


def test_03_settling_time():
    cfg = config.load(config.scenario_dir() / "settling.cfg")
    res = harness.run_scenario(cfg)
    t = res.report.settling["time_s"]
    ok = t is not None and t < 0.6
    record(3, "10 mm step settles (|e_z| < 1 mm for 0.2 s) within 0.6 s", ok,
           f"{t:.2f} s" if t is not None else "never settled")
    assert ok


def test_04_real_time_budget(ref_run):
    mean_ms = ref_run.timing["solve_time_mean_s"] * 1e3
    max_ms = ref_run.timing["solve_time_max_s"] * 1e3
    ok = max_ms < 100.0
    advisory = "met" if mean_ms < 10.0 else "missed (advisory)"
    record(4, "MPC solve time max < 100 ms (mean < 10 ms advisory)", ok,
           f"mean {mean_ms:.2f} ms ({advisory}), max {max_ms:.2f} ms")
    assert ok


def test_05_solver_matches_least_squares_oracle():
    rng = np.random.default_rng(2024)
    params = MpcParams().widened(10.0)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        pr = random_problem(rng, params)
        U = oracles.mpc_lstsq(pr)
        sol = solve(pr)
        worst = max(worst, float(np.max(np.abs(sol.u_seq.reshape(-1) - U))))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-6 and elapsed < 5.0
    record(5, "100 widened problems match the least-squares oracle within 1e-6 in < 5 s", ok,
           f"max diff {worst:.2e}, {elapsed:.2f} s")
    assert ok


def test_06_stlsq_support_recovery():
    t0 = time.perf_counter()
    hits = 0
    for seed in range(100):
        X, Y, support = oracles.sparse_linear_data(seed, n=400, d=16, k=4, snr_db=20.0)
        mask, _ = stlsq(X, Y, 0.05, 1e-3)
        hits += bool(np.array_equal(np.flatnonzero(mask), support))
    elapsed = time.perf_counter() - t0
    ok = hits >= 95 and elapsed < 10.0
    record(6, "exact STLSQ support in >= 95/100 trials in < 10 s", ok, f"{hits}/100, {elapsed:.2f} s")
    assert ok


def test_07_gradient_check_full_size_net():
    net = PredictorNet.initialize(15, seed=7, activation="tanh")
    assert [W.shape for W, _ in net.layers] == [(128, 15), (64, 128), (6, 64)]
    rng = np.random.default_rng(7)
    Z, Y = rng.normal(size=(8, 15)), rng.normal(size=(8, 6))
    floor = 1e-6
    # route 1: the package's own finite-difference check
    own = numerical_gradient_check(net, Z, Y, h=1e-5, floor=floor)
    # route 2: analytic gradients against an independent forward model
    _, grads = loss_and_grads(net, Z, Y)
    params = [p for W, b in net.layers for p in (W.copy(), b.copy())]
    num = oracles.central_difference(
        params, lambda: oracles.mlp_loss(params, Z, Y, net.feature_mask, net.mean, net.std), h=1e-5)
    analytic = [g for pair in grads for g in pair]
    indep = max(float(np.max(np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)))
                for a, n in zip(analytic, num))
    ok = own < 1e-4 and indep < 1e-4
    record(7, "15-128-64-6 tanh net gradient check, max relative error < 1e-4", ok,
           f"package route {own:.2e}, independent route {indep:.2e}")
    assert ok


def test_08_complementary_decomposition():
    dt = 0.01
    t = np.arange(0.0, 20.0, dt)
    rng = np.random.default_rng(8)
    X = np.column_stack([np.sin(2 * np.pi * 4.0 * t), rng.normal(size=(t.size, 5))])
    low, high = decompose_command(X, 1.0, dt)
    # the arm share is defined as input minus chassis share; re-adding them is exact up to that one rounding
    identity = bool(np.array_equal(high, X - low)) and bool(
        np.all(np.abs(low + high - X) <= np.spacing(np.maximum(np.abs(low), np.abs(X)))))
    steady = t > 5.0
    ratio = oracles.sine_amplitude(t[steady], low[steady, 0], 4.0)
    discrete = oracles.first_order_discrete_gain(4.0, 1.0, dt)
    ok = identity and abs(ratio / 0.243 - 1.0) < 0.05 and math.isclose(ratio, discrete, rel_tol=1e-6)
    record(8, "shares sum to the input every sample; 4 Hz chassis ratio 0.243 +- 5%", ok,
           f"identity {'holds' if identity else 'broken'}, ratio {ratio:.4f} (discrete oracle {discrete:.4f})")
    assert ok


def test_09_terrain_battery_ordering(battery):
    dev = battery["height_deviation_mm"]
    ok = battery["ordered"]
    record(9, "mean height deviation flat < slope <= grass <= mixed <= gravel", ok,
           ", ".join(f"{k} {v:.3f}" for k, v in dev.items()) + " mm")
    assert ok


def test_10_predictive_not_worse_than_reactive(ref_run, reactive_run):
    mp = ref_run.report.stats["mean_norm_mm"]
    mr = reactive_run.report.stats["mean_norm_mm"]
    paired = ref_run.report.noise_checksum == reactive_run.report.noise_checksum
    ok = mp <= mr and paired
    record(10, "predictive mean |e| <= reactive mean |e| (paired seeds)", ok,
           f"predictive {mp:.3f} mm, reactive {mr:.3f} mm, margin {mr - mp:+.3f} mm")
    assert ok


def test_11_end_to_end_determinism(ref_cfg, ref_run, tmp_path):
    # retrain from scratch (no cache) and rerun; every output file must match byte for byte
    net, info = harness.train_predictor(ref_cfg, harness.generate_dataset(ref_cfg))
    again = harness.run_scenario(ref_cfg, net, info)
    a = harness.emit_report(ref_run, tmp_path / "a")
    b = harness.emit_report(again, tmp_path / "b")
    names = ("report.json", "errors.csv", "mpc.csv", "groundtruth.csv")
    same = [n for n in names if (a / n).read_bytes() == (b / n).read_bytes()]
    ok = len(same) == len(names)
    record(11, "two identical runs give byte-identical report JSON and CSVs", ok,
           f"{len(same)}/{len(names)} files identical (training included)")
    assert ok

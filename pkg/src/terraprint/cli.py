"""Command-line entry point: ``terraprint {run,ablation,battery,train,gen-data} CONFIG``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from terraprint import harness
from terraprint.config import ConfigError, SEED_KEYS, load
from terraprint.predictor import TrajectoryDataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECK = 3

# thresholds applied by --check
MAX_AXIS_MM = 5.0
MAX_DRIFT_MM_S = 0.05
MAX_SETTLING_S = 0.6
MAX_SOLVE_S = 0.1


def _overrides(items) -> list[str]:
    out = []
    for item in items or ():
        if "=" not in item:
            raise ConfigError(item, "--seed-override needs K=V")
        k, v = item.split("=", 1)
        k = k.strip()
        if "." not in k:
            if k not in SEED_KEYS:
                raise ConfigError(f"seeds.{k}", f"unknown seed; expected one of {', '.join(SEED_KEYS)}")
            k = f"seeds.{k}"
        out.append(f"{k}={v.strip()}")
    return out


def _out_dir(args, cfg) -> Path:
    if args.out:
        return Path(args.out)
    if cfg.out_dir:
        return Path(cfg.out_dir)
    return Path("out") / cfg.name


def _write_json(path: Path, obj) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise harness.ReportError(f"cannot write {path}: {exc.strerror}") from None


def run_checks(report: harness.RunReport, timing: dict) -> list[str]:
    """Threshold violations for a single run (empty when all pass)."""
    s = report.stats
    bad = []
    if s["max_axis_mm"] >= MAX_AXIS_MM:
        bad.append(f"max per-axis error {s['max_axis_mm']:.3f} mm >= {MAX_AXIS_MM}")
    if s["drift_slope_mm_s"] is not None and abs(s["drift_slope_mm_s"]) >= MAX_DRIFT_MM_S:
        bad.append(f"drift {s['drift_slope_mm_s']:.4f} mm/s exceeds {MAX_DRIFT_MM_S}")
    t_settle = report.settling.get("time_s")
    if report.settling.get("protocol") and (t_settle is None or t_settle >= MAX_SETTLING_S):
        bad.append(f"settling time {t_settle} s not below {MAX_SETTLING_S}")
    if timing["solve_time_max_s"] >= MAX_SOLVE_S:
        bad.append(f"max solve time {timing['solve_time_max_s'] * 1e3:.1f} ms exceeds the MPC period")
    if report.counters["stale_commands"]:
        bad.append(f"{report.counters['stale_commands']} stale commands")
    return bad


def _summary(report: harness.RunReport) -> str:
    s = report.stats
    axes = " ".join(f"{a}={s[a]['max']:.3f}" for a in "xyz")
    line = f"{report.name}: max error mm {axes}, mean |e| {s['mean_norm_mm']:.3f} mm"
    if report.settling.get("time_s") is not None:
        line += f", settling {report.settling['time_s']:.2f} s"
    return line


def cmd_run(args, cfg) -> int:
    net, info = harness.resolve_predictor(cfg)
    result = harness.run_scenario(cfg, net, info, realtime=args.realtime)
    out = harness.emit_report(result, _out_dir(args, cfg))
    print(_summary(result.report))
    print(f"report written to {out}")
    if args.check:
        return _fail(run_checks(result.report, result.timing))
    return EXIT_OK


def cmd_ablation(args, cfg) -> int:
    res = harness.run_ablation(cfg)
    out = _out_dir(args, cfg)
    harness.emit_report(res["predictive"], out / "predictive")
    harness.emit_report(res["reactive"], out / "reactive")
    summary = {k: v for k, v in res.items() if k not in ("predictive", "reactive")}
    _write_json(out / "ablation.json", summary)
    print(f"predictive mean |e| {summary['mean_norm_predictive_mm']:.3f} mm, "
          f"reactive {summary['mean_norm_reactive_mm']:.3f} mm, margin {summary['margin_mm']:+.3f} mm")
    if args.check:
        bad = []
        if summary["margin_mm"] < 0.0:
            bad.append("predictive MPC is worse than reactive")
        if not summary["paired_noise"]:
            bad.append("noise realizations differ between the paired runs")
        return _fail(bad)
    return EXIT_OK


def cmd_battery(args, cfg) -> int:
    res = harness.run_terrain_battery(cfg)
    out = _out_dir(args, cfg)
    for name, r in res["results"].items():
        harness.emit_report(r, out / name)
    summary = {k: v for k, v in res.items() if k != "results"}
    _write_json(out / "battery.json", summary)
    for name, dev in summary["height_deviation_mm"].items():
        print(f"{name:7s} mean height deviation {dev:.3f} mm")
    print("ordering holds" if summary["ordered"] else "ordering violated")
    if args.check:
        bad = []
        if not summary["ordered"]:
            bad.append("terrain classes are not ordered by height deviation")
        if summary["stale_commands"]:
            bad.append(f"{summary['stale_commands']} stale commands")
        return _fail(bad)
    return EXIT_OK


def cmd_train(args, cfg) -> int:
    data = TrajectoryDataset.from_csv_dir(args.data) if args.data else None
    net, info = harness.train_predictor(cfg, data)
    out = _out_dir(args, cfg)
    try:
        out.mkdir(parents=True, exist_ok=True)
        net.save(out / "predictor.json")
    except OSError as exc:
        raise harness.ReportError(f"cannot write {out}: {exc.strerror}") from None
    _write_json(out / "training.json", info)
    print(f"selected {len(info['selected_features'])} channels: {', '.join(info['selected_features'])}")
    print(f"final loss train {info['train_loss'][-1]:.4g} val {info['val_loss'][-1]:.4g}")
    print(f"predictor written to {out / 'predictor.json'}")
    return EXIT_OK


def cmd_gen_data(args, cfg) -> int:
    data = harness.generate_dataset(cfg)
    out = _out_dir(args, cfg)
    try:
        data.to_csv_dir(out)
    except OSError as exc:
        raise harness.ReportError(f"cannot write {out}: {exc.strerror}") from None
    print(f"{len(data.trajectories)} trajectories written to {out}")
    return EXIT_OK


def _fail(problems: list[str]) -> int:
    for p in problems:
        print(f"check failed: {p}", file=sys.stderr)
    return EXIT_CHECK if problems else EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "ablation": cmd_ablation,
    "battery": cmd_battery,
    "train": cmd_train,
    "gen-data": cmd_gen_data,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="terraprint", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="scenario file (key = value)")
        p.add_argument("--out", help="output directory (default: output.dir or out/<name>)")
        p.add_argument("--seed-override", action="append", metavar="K=V",
                       help="override a seed (bare K means seeds.K) or any config key; repeatable")
        p.add_argument("--realtime", action="store_true", help="pace the loop to wall-clock time")
        p.add_argument("--check", action="store_true", help="exit 3 when an acceptance threshold is violated")
        if name == "train":
            p.add_argument("--data", help="directory of traj_XXXX.csv files from gen-data")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load(args.config, _overrides(args.seed_override))
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except harness.ReportError as exc:
        print(f"fatal: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Compare the compiled kernels with their pure-Python twins.

Usage: python3 benchmarks/bench_kernels.py [--repeat 5] [--scenario]

Each kernel is called on identical inputs through both backends; the table
lists the best-of-``repeat`` time per call and the speedup. ``--scenario``
also times a short closed-loop run end to end under each backend (in a
subprocess, since the backend is fixed at import).
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from terraprint import _kernels_py
from terraprint.terrain import build_scenario

try:
    from terraprint import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None


def _inputs():
    field = build_scenario({"kind": "mixed", "slope_deg": 5.0, "rough_amp_mm": 6.0,
                            "rough_cutoff_cpm": 0.3, "seed": 3})
    targs = field.kernel_args()
    rng = np.random.default_rng(0)
    n = 100
    noise = rng.normal(0.0, 1e-3, n * 12)
    state = np.zeros(_kernels_py.STATE_LEN)
    state[0] = 4.9
    cmd = np.array([0.3, 0.05, 0.01, 0.0, -0.01])
    params = np.array([1e-3, 1 - np.exp(-1e-3 / 0.05), 1 - np.exp(-1e-3 / 0.02), 0.3, 0.25, 0.3, 0.3, 0.15, 0.0])
    out = np.zeros(_kernels_py.OUT_LEN)
    return targs, noise, state, cmd, params, out, n


def bench(mod, repeat: int) -> dict:
    targs, noise, state, cmd, params, out, n = _inputs()
    cases = {
        "terrain_eval": (lambda: mod.terrain_eval(5.2, 0.1, *targs), 2000),
        "contact_plane": (lambda: mod.contact_plane(5.2, 0.1, 0.2, 0.3, 0.25, noise, 3, *targs), 2000),
        f"advance ({n} steps)": (lambda: mod.advance(state.copy(), cmd, params, n, noise, *targs, out), 50),
    }
    res = {}
    for name, (fn, number) in cases.items():
        best = min(timeit.repeat(fn, number=number, repeat=repeat)) / number
        res[name] = best
    return res


SCENARIO_SNIPPET = (
    "import time; from terraprint import config, harness, kernels; "
    "c = config.load(config.scenario_dir() / 'reference.cfg', ['predictor.source=zero', 'duration_s=5']); "
    "t = time.perf_counter(); harness.run_scenario(c); print(kernels.BACKEND, time.perf_counter() - t)"
)


def scenario_times() -> dict:
    out = {}
    for pure in ("0", "1"):
        env = dict(os.environ, TERRAPRINT_PURE_PYTHON=pure)
        line = subprocess.run([sys.executable, "-c", SCENARIO_SNIPPET], env=env, check=True,
                              capture_output=True, text=True).stdout.split()
        out[line[0]] = float(line[1])
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scenario", action="store_true", help="also time a 5 s closed-loop run")
    args = ap.parse_args(argv)
    py = bench(_kernels_py, args.repeat)
    if _kernels_c is None:
        print("compiled kernels not available; python backend only")
        for name, t in py.items():
            print(f"{name:22s} python {t * 1e6:10.2f} us")
        return 0
    cy = bench(_kernels_c, args.repeat)
    print(f"{'kernel':22s} {'python [us]':>12s} {'cython [us]':>12s} {'speedup':>8s}")
    for name in py:
        print(f"{name:22s} {py[name] * 1e6:12.2f} {cy[name] * 1e6:12.2f} {py[name] / cy[name]:8.1f}x")
    if args.scenario:
        st = scenario_times()
        print(f"5 s closed-loop run: python {st['python']:.2f} s, cython {st['cython']:.2f} s "
              f"({st['python'] / st['cython']:.1f}x)")
    return 0


if __name__ == "__main__":
    sys.exit(main())

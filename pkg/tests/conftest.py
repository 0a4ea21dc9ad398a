import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict = {}
# wall-clock seconds of the shared session runs
WALL_TIMES: dict = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


# -- shared expensive runs (computed once per session) ---------------------------

@pytest.fixture(scope="session")
def ref_cfg():
    from terraprint import config

    return config.load(config.scenario_dir() / "reference.cfg")


@pytest.fixture(scope="session")
def ref_predictor(ref_cfg):
    import time

    from terraprint import harness

    t0 = time.perf_counter()
    out = harness.train_predictor(ref_cfg)
    WALL_TIMES["training"] = time.perf_counter() - t0
    return out


@pytest.fixture(scope="session")
def ref_run(ref_cfg, ref_predictor):
    from terraprint import harness

    return harness.run_scenario(ref_cfg, *ref_predictor)


@pytest.fixture(scope="session")
def reactive_run(ref_cfg):
    from dataclasses import replace

    from terraprint import harness

    return harness.run_scenario(replace(ref_cfg, predictor="zero"), None, {"source": "zero"})


@pytest.fixture(scope="session")
def battery(ref_cfg, ref_predictor):
    from terraprint import harness

    return harness.run_terrain_battery(ref_cfg)

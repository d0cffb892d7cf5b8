import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

import uavfl.sched_time as _st  # noqa: E402

settings.register_profile("suite", max_examples=60, deadline=None)
settings.load_profile("suite")

# every schedule any solver returns during the session, for the binary-recovery criterion
SOLVER_OUTPUTS: list = []
ACCEPTANCE_LINES: list = []

_orig_finish = _st._finish


def _recording_finish(*args, **kwargs):
    sol = _orig_finish(*args, **kwargs)
    SOLVER_OUTPUTS.append((np.array(sol.schedule), np.array(sol.tau)))
    return sol


_st._finish = _recording_finish


def pytest_collection_modifyitems(session, config, items):
    # the binary-recovery audit must see every solver run, so it goes last
    last = [it for it in items if it.name == "test_binary_recovery"]
    items[:] = [it for it in items if it.name != "test_binary_recovery"] + last


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

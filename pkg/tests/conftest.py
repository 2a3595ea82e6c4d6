import json
from pathlib import Path

import numpy as np
import pytest

DATA = Path(__file__).with_name("data")

# acceptance criteria register their verdict lines here
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(scope="session")
def oracles():
    recs = json.loads((DATA / "oracles.json").read_text())
    for r in recs:
        for k in ("z1", "s1", "z2", "s2", "K"):
            r[k] = complex(*r[k])
    return recs


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

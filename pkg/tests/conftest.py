from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from bentrank import SimScenario, generate
from helpers import bent_data

DATA = Path(__file__).parent / "data"

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def case1():
    return generate(SimScenario(reps=1, seed=99), 0)


@pytest.fixture
def noiseless():
    return bent_data(z=np.linspace(-1.99, 1.99, 200))

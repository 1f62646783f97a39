import math

import numpy as np
import pytest

from chnl.grid import TorusGrid
from chnl.kernels import MollifierProfile


@pytest.fixture
def grid1():
    return TorusGrid(1, 64)


@pytest.fixture
def grid2():
    return TorusGrid(2, 32, 1.0)


@pytest.fixture
def bump():
    return MollifierProfile("compact_bump")


@pytest.fixture
def gauss():
    return MollifierProfile("truncated_gaussian")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rel(a, b):
    return abs(a - b) / max(1.0, abs(b))


TWO_PI = 2 * math.pi


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

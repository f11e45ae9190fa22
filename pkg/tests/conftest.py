import warnings

import numpy as np
import pytest

from plsim.model import Dataset

# PASS/FAIL lines from the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


def make_data(seed, n=80, p=5, q=2, link=np.sin, noise=0.3):
    """Small PLSIM sample with a dense index direction."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    z = rng.standard_normal((n, q))
    alpha = np.zeros(p)
    alpha[:3] = [2.0, 1.0, 1.0]
    alpha /= np.linalg.norm(alpha)
    beta = np.linspace(0.5, -0.5, q)
    y = link(x @ alpha) + z @ beta + noise * rng.standard_normal(n)
    return Dataset(y, x, z), alpha, beta


@pytest.fixture
def small_data():
    return make_data(0)


@pytest.fixture(autouse=True)
def _quiet_runtime_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

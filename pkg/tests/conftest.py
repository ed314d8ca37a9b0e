import warnings

import numpy as np
import pytest

from kwise_nls.radial import Params, make_grid

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def unit():
    return Params.uniform(d=2, K=3, q=2.0)


@pytest.fixture(scope="session")
def grid():
    return make_grid(30.0, 4000, 2)


@pytest.fixture(scope="session")
def coarse():
    return make_grid(20.0, 1000, 2)


@pytest.fixture(scope="session")
def limit(unit, grid):
    from kwise_nls.minimizer import minimize_limit_problem

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return minimize_limit_problem(unit, grid)


@pytest.fixture(scope="session")
def thresholds(unit, grid):
    from kwise_nls.thresholds import threshold_report

    return threshold_report(unit, grid)


def smooth_state(rng, grid, K, scale=1.0):
    r = grid.nodes
    vals = np.zeros((K, grid.n))
    for i in range(K):
        for _ in range(2):
            c = rng.uniform(0.0, 3.0)
            w = rng.uniform(0.5, 1.5)
            vals[i] += rng.uniform(0.3, 1.5) * np.exp(-0.5 * ((r - c) / w) ** 2)
    return scale * vals

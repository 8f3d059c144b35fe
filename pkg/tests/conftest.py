"""Shared fixtures and the acceptance summary hook."""

import numpy as np
import pytest

from hkconv import manifold

# acceptance tests append one formatted line each; printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def cfg3():
    return manifold.ManifoldConfig(dim=3)


@pytest.fixture
def cfg2():
    return manifold.ManifoldConfig(dim=2)


@pytest.fixture
def rng():
    return np.random.default_rng(0)

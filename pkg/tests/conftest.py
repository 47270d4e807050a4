import numpy as np
import pytest

from metroflow.data import synth_flows
from metroflow.graph import synth_topology
from metroflow.training import prepare_dataset


@pytest.fixture(scope="session")
def small_dataset():
    """Five stations, twelve workdays at 30 min: 31 train, 31 validation and 155 test samples."""
    g = synth_topology(2, 3, 1, seed=0)
    cube, exo, _ = synth_flows(g, 12, 30, 0.3, seed=0)
    return prepare_dataset(cube, exo, g)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

import numpy as np
import pytest
from hypothesis import settings

from ordicc.simulation import SimConfig, generate_dataset

# first calls pay for JIT compilation; per-example timing is meaningless here
settings.register_profile("ordicc", deadline=None)
settings.load_profile("ordicc")

from _acceptance_log import ACCEPTANCE_LINES


@pytest.fixture(scope="session")
def sim_single():
    """Default single-level dataset (replicate 0)."""
    return generate_dataset(SimConfig(seed=7), 0)


@pytest.fixture(scope="session")
def sim_nested():
    return generate_dataset(SimConfig(design="nested", seed=7), 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

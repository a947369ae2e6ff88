from pathlib import Path

import numpy as np
import pytest

from perovdp.config import load_config
from perovdp.savings import CRRA, SavingsParams
from perovdp.spectral import MarkovChain

REPO = Path(__file__).resolve().parents[1]
CONFIGS = REPO / "configs"

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def gap_params():
    """Canonical instance: the shipped condition-gap savings model."""
    return load_config(CONFIGS / "gap.toml").params


@pytest.fixture(scope="session")
def crra_params():
    return load_config(CONFIGS / "crra_oracle.toml").params


@pytest.fixture
def small_crra():
    """Coarse CRRA zero-income model for fast solver tests."""
    chain = MarkovChain(np.array([[0.8, 0.2], [0.3, 0.7]]))
    return SavingsParams(chain, R=np.array([[1.2, 0.85], [1.2, 0.85]]), y=0.0, discount=0.87,
                         utility=CRRA(0.5), w_grid=np.geomspace(0.01, 100.0, 40),
                         c_shares=np.linspace(0.0, 1.0, 41))

import os
from pathlib import Path

import numpy as np
import pytest

from sdmd.dictionary import MonomialDictionary
from sdmd.models import OrnsteinUhlenbeck

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

os.environ.setdefault("SDMD_LAB_THREADS", "1")


@pytest.fixture
def ou():
    return OrnsteinUhlenbeck(theta=1.0, mu0=0.0, sigma=0.1)


@pytest.fixture
def hand_data(ou):
    """Three points {-1, 0, 1} with the dictionary {1, x}."""
    X = np.array([[-1.0], [0.0], [1.0]])
    return X, MonomialDictionary(dim=1, max_degree=1), ou


@pytest.fixture
def config_dir():
    return CONFIGS


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one verdict line per acceptance criterion for the terminal summary."""

    def log(line):
        ACCEPTANCE_LINES.append(line)
        print(line)

    return log


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

import numpy as np
import pytest

from attnbias import AttentionParams
from attnbias.linalg import Rng


@pytest.fixture
def rng():
    return Rng(20240601)


@pytest.fixture
def worked():
    """Two scalar entities 0 and 1 with identity projections."""
    return np.array([[0.0], [1.0]]), AttentionParams.identity(1)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

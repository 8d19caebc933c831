import numpy as np
import pytest

from reachlp.data import load


@pytest.fixture(scope="session")
def m5():
    return load("m5")


@pytest.fixture(scope="session")
def m5_sets(m5):
    """Target {4} and avoid {1, 2} as state ids."""
    return frozenset({m5.state_id("4")}), frozenset({m5.state_id("1"), m5.state_id("2")})


@pytest.fixture
def uniform5():
    return np.full(5, 0.2)

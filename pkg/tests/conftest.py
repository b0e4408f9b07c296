"""Shared fixtures for the ergolab test suite"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from modules.laws import Law
from modules.models import ZdNN, generate_environment


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_env():
    """Z^2 torus of side 6 with Uniform[1, 2] conductances"""
    return generate_environment(ZdNN(Law.uniform(1.0, 2.0)), 2, 6, seed=101)


@pytest.fixture
def weighted_env():
    """Z^2 torus of side 5 with multiplicities in {1, 2}"""
    return generate_environment(ZdNN(Law.uniform(0.5, 2.0), Law.choice((1.0, 2.0))), 2, 5, seed=202)


@pytest.fixture
def chain_env():
    """Ring of 16 sites with Uniform[1, 2] conductances"""
    return generate_environment(ZdNN(Law.uniform(1.0, 2.0)), 1, 16, seed=303)


@pytest.fixture
def two_state_env():
    """Two atoms joined by both bonds of the L = 2 ring, multiplicities {1, 2}"""
    return generate_environment(ZdNN(Law.uniform(0.5, 2.0), Law.choice((1.0, 2.0))), 1, 2, seed=404)

import numpy as np
import pytest

from ranlb.config import SimConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_sim():
    """A short, light configuration for environment-level tests."""
    return SimConfig(n_ues=12, episode_length=5, warmup_ticks=2)

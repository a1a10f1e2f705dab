"""
Shared fixtures for the armaxlab test-suite.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add the repository root to Python path
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from armaxlab.model_core import ArmaxParams, simulate_armax  # noqa: E402
from armaxlab.signals import white_input  # noqa: E402


@pytest.fixture
def reference_params():
    """ARMAX(2,1,1) with a=(-1.1, 0.3), b=(1), c=(0.4), sigma2=1."""
    return ArmaxParams(a=[-1.1, 0.3], b=[1.0], c=[0.4], sigma2=1.0)


@pytest.fixture
def ma1_params():
    return ArmaxParams(c=[0.5], sigma2=1.0)


@pytest.fixture
def make_trajectory():
    """Simulate a white-input record of the given model."""

    def _make(params, horizon, seed=0, with_truth=False, burn_in=0):
        u = white_input(horizon + burn_in, 1.0, seed)
        return simulate_armax(params, u, horizon, seed, with_truth=with_truth, burn_in=burn_in)

    return _make


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

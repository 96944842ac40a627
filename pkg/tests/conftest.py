"""Shared fixtures and helpers for the test suite."""

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def binom_se(p_hat: float, n: int) -> float:
    """Standard error of an empirical frequency."""
    return float(np.sqrt(max(p_hat * (1.0 - p_hat), 1e-12) / n))

import numpy as np
import pytest

from irera import kernels


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Trigger numba compilation once so per-test runtime budgets measure
    steady-state behavior, not jit latency."""
    matrix = np.eye(4)
    kernels.max_dot(matrix, matrix[:2])
    kernels.prior_multiplier(np.array([0.1, 0.2]), 10.0)

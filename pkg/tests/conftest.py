import numpy as np
import pytest

from modeuler import kernels


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    """Run a test once per importable kernel backend."""
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

from pathlib import Path

import numpy as np
import pytest

from metricdepth import kernels

DATA = Path(__file__).parent / "data"
FIXTURE = DATA / "street_small"
GOLDEN = DATA / "golden_street_small_oracle"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=sorted(kernels.BACKENDS))
def kernel_backend(request):
    prev = kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(prev)


@pytest.fixture(scope="session")
def street_small():
    from metricdepth.dataset import DiskBundle

    return DiskBundle(FIXTURE)

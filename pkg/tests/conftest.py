import numpy as np
import pytest

from plan_cl import _pykernels

try:
    from plan_cl import _ckernels
except ImportError:
    _ckernels = None

BACKENDS = [pytest.param(_pykernels, id="python")]
if _ckernels is not None:
    BACKENDS.append(pytest.param(_ckernels, id="cython"))


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

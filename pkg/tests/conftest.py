import functools

import numpy as np
import pytest

from aodisloc.complex import LatticeSpec, build_complex


@functools.lru_cache(maxsize=None)
def cached_complex(kind, N, bc):
    return build_complex(LatticeSpec(kind, N, bc))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)

import random
from array import array

import pytest

from kdlab.tensor import Tensor


@pytest.fixture
def rng():
    return random.Random(12345)


def rand_tensor(rng, shape, lo=-2.0, hi=2.0):
    n = 1
    for s in shape:
        n *= s
    return Tensor(shape, array("d", (rng.uniform(lo, hi) for _ in range(n))))

import numpy as np
import pytest
from hypothesis import settings

from rigged.system import build_rigged, make_spec

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def brockett_spec():
    return make_spec(3, 2, ["w1", "w2", "q1*w2 - q2*w1"], name="brockett")


@pytest.fixture
def quad():
    return build_rigged(make_spec(1, 1, ["w1^2"]))


@pytest.fixture
def dint():
    return build_rigged(make_spec(2, 1, ["q2", "w1"], linear=True))


@pytest.fixture
def zero():
    return build_rigged(make_spec(1, 1, ["0"], linear=True))


@pytest.fixture
def brockett():
    return build_rigged(brockett_spec())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

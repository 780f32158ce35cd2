import numpy as np
import pytest
from hypothesis import settings

from switchkf.synthdata import generate, scenario

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def random_psd(rng, d, scale=1.0, jitter=1e-3):
    a = rng.normal(size=(d, d))
    return scale * (a @ a.T / d) + jitter * np.eye(d)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def ws_episode():
    return generate(scenario("ws-gauss", T=200), 7)


@pytest.fixture(scope="session")
def ms_episode():
    return generate(scenario("ms-unif", T=200), 11)

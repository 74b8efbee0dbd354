import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from obic.data import bundled, load_corpus
from obic.transforms import CodecNetworks

settings.register_profile(
    "obic", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("obic")


@pytest.fixture(scope="session")
def nets():
    """Untrained default-size networks; fine for anything that is not about quality."""
    return CodecNetworks(seed=3)


@pytest.fixture(scope="session")
def small_nets():
    return CodecNetworks(channels=8, hyper_channels=4, seed=5, dtype=np.float64)


@pytest.fixture(scope="session")
def heldout():
    return load_corpus(bundled("heldout"))


@pytest.fixture(scope="session")
def corpus():
    return load_corpus(bundled("corpus"))


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def scene_with_mask(seed=0, h=64, w=64):
    r = np.random.default_rng(seed)
    image = r.random((h, w, 3))
    mask = np.zeros((h, w), np.uint8)
    mask[h // 4 : 3 * h // 4, w // 8 : w // 2] = 1
    return image, mask

import numpy as np
import pytest

from ciglrt import network as nw
from ciglrt import sensing as se

THETA_VIC = np.array([1.0, 0.9, 1.2, 1.1, 1.5])


@pytest.fixture
def ring10():
    s = nw.spectrum(nw.build_ring(10))
    return s, nw.make_weights(s)


@pytest.fixture
def pairwise():
    return se.pairwise_linear_model()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)

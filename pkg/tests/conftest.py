import numpy as np
import pytest
from scipy.stats import ortho_group


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_orthogonal(k, rng):
    return ortho_group.rvs(k, random_state=rng) if k > 1 else np.ones((1, 1))


def random_unit(k, rng):
    v = rng.standard_normal(k)
    return v / np.linalg.norm(v)

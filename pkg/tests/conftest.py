import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_pd(rng, p, ridge=1.0):
    b = rng.standard_normal((p, p))
    return b @ b.T + ridge * np.eye(p)

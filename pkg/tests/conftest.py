import numpy as np
import pytest

from privtrend.engine import LocalCluster


def unit_rows(rng, n, k):
    x = rng.normal(size=(n, k))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def unit_vec(rng, k):
    v = rng.normal(size=k)
    return v / np.linalg.norm(v)


def plaintext_count(X, q, radius_l2):
    d = (X * X).sum(axis=1) - 2.0 * X @ q + float(q @ q)
    return int(np.sum(d < radius_l2**2))


@pytest.fixture
def rng():
    return np.random.default_rng(0xC0FFEE)


@pytest.fixture
def cluster():
    return LocalCluster(n_servers=3, eps_f_max=3.0, seed=7, zero_noise=True)

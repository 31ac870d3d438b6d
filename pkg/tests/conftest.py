import numpy as np
import pytest

from linkadjust import LinkedDataset


def random_dataset(rng, n=40, p=2, q=2, sigma=0.5, mismatch=0.2):
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    Z = np.column_stack([np.ones(n), rng.standard_normal((n, q - 1))])
    beta = rng.normal(0, 1, p)
    y = X @ beta + sigma * rng.standard_normal(n)
    m = rng.random(n) < mismatch
    idx = np.flatnonzero(m)
    y[idx] = y[rng.permutation(idx)]
    return LinkedDataset(y, X, Z, true_m=m.astype(int))


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)

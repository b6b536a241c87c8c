import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from merton_impact.rng import brownian_increments, path_generator


def test_path_streams_independent_of_batching():
    a = brownian_increments(7, np.arange(10), 5, 2, 0.01)
    b = brownian_increments(7, np.array([3, 4]), 5, 2, 0.01)
    np.testing.assert_array_equal(a[3:5], b)


def test_substeps_share_the_path():
    fine = brownian_increments(1, np.arange(3), 8, 2, 0.01, substeps=1)
    coarse = brownian_increments(1, np.arange(3), 4, 2, 0.02, substeps=2)
    np.testing.assert_allclose(coarse, fine.reshape(3, 4, 2, 2).sum(axis=2), rtol=1e-14)


@given(st.integers(0, 2**63 - 1), st.integers(0, 10**9))
def test_seed_determinism(seed, path):
    x = path_generator(seed, path).standard_normal(3)
    y = path_generator(seed, path).standard_normal(3)
    np.testing.assert_array_equal(x, y)


def test_variance():
    dB = brownian_increments(0, np.arange(2000), 10, 2, 0.25)
    assert abs(dB.var() / 0.25 - 1.0) < 0.05

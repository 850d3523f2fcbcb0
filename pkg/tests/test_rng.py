import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from cbdi import rng


def test_mix64_reference_value():
    # SplitMix64 output for state 0 after one golden-ratio increment
    assert rng.mix64(rng.GOLDEN) == 0xE220A8397B1DCDAF


@given(st.integers(0, 2**64 - 1), st.integers(0, 2**40), st.integers(1, 5))
def test_scalar_and_vector_paths_agree(seed, counter, role):
    key = rng.stream_key(seed, 7, role)
    a = rng.uniform(np.uint64(key), np.uint64(counter), 3)
    b = rng.uniform(np.uint64(key), np.array([counter, counter], dtype=np.uint64), 3)
    assert a == b[0] == b[1]


@given(st.integers(0, 2**63), st.integers(0, 10**6))
def test_uniform_in_open_unit_interval(seed, counter):
    key = np.uint64(rng.stream_key(seed, 0, rng.JUMP))
    u = rng.uniform(key, np.arange(counter, counter + 64, dtype=np.uint64))
    assert np.all((u > 0) & (u < 1))


def test_roles_and_paths_give_distinct_streams():
    keys = {rng.stream_key(1, p, r) for p in range(50) for r in range(1, 6)}
    assert len(keys) == 250


def test_uniform_and_normal_distribution():
    key = np.uint64(rng.stream_key(3, 0, rng.MARK))
    c = np.arange(100_000, dtype=np.uint64)
    assert stats.kstest(rng.uniform(key, c), "uniform").pvalue > 0.01
    ka, kb = (np.uint64(rng.stream_key(3, 0, r)) for r in (rng.GAUSS_A, rng.GAUSS_B))
    assert stats.kstest(rng.normal(ka, kb, c), "norm").pvalue > 0.01


def test_stream_is_order_free():
    s1 = rng.RngStream(11, path=2)
    whole = s1.random(10)
    s2 = rng.RngStream(11, path=2)
    parts = np.concatenate([s2.random(3), s2.random(7)])
    np.testing.assert_array_equal(whole, parts)


@pytest.mark.parametrize("size", [None, 5, (2, 3)])
def test_stream_shapes(size):
    out = rng.RngStream(0).random(size)
    assert np.shape(out) == (() if size is None else np.empty(size).shape)

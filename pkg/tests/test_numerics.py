import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pgprune import numerics as nx
from pgprune.errors import DimensionError, NumericError


def test_matmul_identity_and_hand_product():
    eye = np.eye(2, dtype=np.float32)
    assert np.array_equal(nx.matmul(eye, eye), eye)
    out = nx.matmul(np.array([[1, 2], [3, 4]], np.float32), np.array([[0], [1]], np.float32))
    assert np.array_equal(out, [[2], [4]])


def test_matmul_zeros_and_mismatch():
    a = np.ones((3, 4), np.float32)
    assert not nx.matmul(a, np.zeros((4, 2), np.float32)).any()
    with pytest.raises(DimensionError):
        nx.matmul(a, np.ones((3, 2), np.float32))


def test_matmul_batched_matches_loop(rng):
    a = rng.standard_normal((3, 5, 4)).astype(np.float32)
    b = rng.standard_normal((4, 6)).astype(np.float32)
    out = nx.matmul(a, b)
    for i in range(3):
        np.testing.assert_allclose(out[i], a[i] @ b, rtol=1e-5, atol=1e-6)


def test_matmul_associative(rng):
    a, b, c = (rng.standard_normal(s).astype(np.float32) for s in ((4, 5), (5, 3), (3, 6)))
    left = nx.matmul(nx.matmul(a, b), c)
    right = nx.matmul(a, nx.matmul(b, c))
    np.testing.assert_allclose(left, right, rtol=1e-4, atol=1e-4)


def test_softmax_examples():
    np.testing.assert_allclose(nx.softmax_rows(np.zeros((1, 2))), [[0.5, 0.5]])
    big = nx.softmax_rows(np.array([[1000.0, 0.0]]))
    assert np.all(np.isfinite(big)) and big[0, 0] == pytest.approx(1.0) and big[0, 1] == pytest.approx(0.0)
    np.testing.assert_allclose(nx.softmax_rows(np.array([[np.log(2), 0.0]])), [[2 / 3, 1 / 3]], rtol=1e-6)


def test_softmax_rejects_nan():
    with pytest.raises(NumericError):
        nx.softmax_rows(np.array([[np.nan, 1.0]]))


@settings(max_examples=100, deadline=None)
@given(arrays(np.float32, (3, 7), elements=st.floats(-(2.0**100), 2.0**100, width=32)))
def test_softmax_rows_sum_to_one(a):
    np.testing.assert_allclose(nx.softmax_rows(a).sum(axis=-1), 1.0, atol=1e-6)


def test_log_softmax_matches_softmax(rng):
    a = rng.standard_normal((4, 9)).astype(np.float32) * 5
    np.testing.assert_allclose(np.exp(nx.log_softmax_rows(a)), nx.softmax_rows(a), rtol=1e-5, atol=1e-7)


def test_rmsnorm_examples():
    np.testing.assert_allclose(nx.rmsnorm(np.ones(5, np.float32), np.ones(5, np.float32), 0.0), np.ones(5))
    assert not nx.rmsnorm(np.zeros(4, np.float32), np.ones(4, np.float32), 1e-5).any()
    out = nx.rmsnorm(np.array([3.0, 4.0], np.float32), np.ones(2, np.float32), 0.0)
    np.testing.assert_allclose(out, [0.8485, 1.1314], atol=1e-4)
    with pytest.raises(DimensionError):
        nx.rmsnorm(np.ones(3, np.float32), np.ones(2, np.float32), 0.0)


def test_silu_and_gather():
    x = np.array([-2.0, 0.0, 3.0], np.float32)
    np.testing.assert_allclose(nx.silu(x), x / (1 + np.exp(-x)), rtol=1e-6)
    table = np.arange(6, dtype=np.float32).reshape(3, 2)
    assert np.array_equal(nx.gather_rows(table, [[2, 0]]), [[[4, 5], [0, 1]]])
    with pytest.raises(DimensionError):
        nx.gather_rows(table, [3])


def test_inputs_untouched_and_deterministic(rng):
    a = rng.standard_normal((5, 5)).astype(np.float32)
    keep = a.copy()
    first = nx.softmax_rows(a)
    nx.silu(a)
    nx.rmsnorm(a, np.ones(5, np.float32), 1e-5)
    assert np.array_equal(a, keep)
    assert np.array_equal(first, nx.softmax_rows(a))


def test_as_tensor_rejects_empty():
    with pytest.raises(DimensionError):
        nx.as_tensor(np.zeros((0, 3)))
    assert nx.as_tensor([[1, 2]]).dtype == np.float32

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pgprune.errors import ConfigError, NumericError
from pgprune.oracle import projection_oracle
from pgprune.projection import Budget, budget_shift, project, project_weighted


def test_feasible_input_is_unchanged():
    np.testing.assert_array_equal(project([0.3, 0.4], 1.0), [0.3, 0.4])


def test_clamp_suffices():
    np.testing.assert_array_equal(project([2.0, -1.0], 2.0), [1.0, 0.0])


def test_equal_shift():
    np.testing.assert_allclose(project([0.9, 0.9, 0.9], 1.5), [0.5, 0.5, 0.5], atol=1e-10)


def test_weighted_example():
    np.testing.assert_allclose(project_weighted([1.0, 1.0], 2.0, [1.0, 3.0]), [0.8, 0.4], atol=1e-9)


def test_weighted_slack_is_clamp():
    z = np.array([1.4, -0.2, 0.5])
    np.testing.assert_array_equal(project_weighted(z, 10.0, [1.0, 2.0, 3.0]), np.clip(z, 0, 1))


def test_unit_weights_reduce_to_project(rng):
    for _ in range(50):
        z = rng.normal(0.5, 1, 20)
        K = rng.uniform(1, 15)
        assert np.max(np.abs(project_weighted(z, K, np.ones(20)) - project(z, K))) <= 1e-12


def test_budget_shift_may_be_negative():
    assert budget_shift(np.array([0.1, 0.1]), 1.0) < 0


def test_non_finite_rejected():
    with pytest.raises(NumericError):
        project([np.nan, 0.1], 1.0)


def test_budget_object():
    b = Budget.retained(0.5, 10)
    assert b.K == 5 and b.mode == "unit_count"
    w = Budget.retained(0.5, 2, [1.0, 3.0])
    assert w.K == 2 and w.mode == "param_weighted"
    np.testing.assert_allclose(project([1.0, 1.0], w), [0.8, 0.4], atol=1e-9)
    with pytest.raises(ConfigError):
        Budget.retained(0.0, 10)
    with pytest.raises(ConfigError):
        Budget(1.0, np.array([1.0, -1.0]))


vectors = arrays(np.float64, st.integers(1, 40), elements=st.floats(-3, 4))


@settings(max_examples=300, deadline=None)
@given(vectors, st.floats(0.05, 1.0))
def test_feasible_and_idempotent(z, frac):
    K = frac * z.size
    s = project(z, K)
    assert s.min() >= 0 and s.max() <= 1 and s.sum() <= K + 1e-8
    assert np.max(np.abs(project(s, K) - s)) <= 1e-10


@settings(max_examples=300, deadline=None)
@given(vectors, st.floats(0.05, 1.0), st.data())
def test_non_expansive(a, frac, data):
    b = data.draw(arrays(np.float64, a.size, elements=st.floats(-3, 4)))
    K = frac * a.size
    assert np.linalg.norm(project(a, K) - project(b, K)) <= np.linalg.norm(a - b) + 1e-8


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 7), elements=st.floats(-2, 3)), st.floats(0.05, 1.0))
def test_matches_active_set_oracle(z, frac):
    K = frac * z.size
    assert np.max(np.abs(project(z, K) - projection_oracle(z, K))) <= 1e-6


@settings(max_examples=200, deadline=None)
@given(
    arrays(np.float64, st.integers(1, 6), elements=st.floats(-2, 3)),
    st.floats(0.05, 1.0),
    st.data(),
)
def test_weighted_matches_oracle(z, frac, data):
    w = data.draw(arrays(np.float64, z.size, elements=st.floats(0.2, 5)))
    K = frac * w.sum()
    s = project_weighted(z, K, w)
    assert w @ s <= K + 1e-8
    assert np.max(np.abs(s - projection_oracle(z, K, w))) <= 1e-6


def test_projection_is_closest_feasible_point(rng):
    # no random feasible point is closer than the projection
    z = rng.normal(0.6, 0.8, 6)
    s = project(z, 2.0)
    for _ in range(2000):
        y = project(rng.random(6) * 1.2, 2.0)
        assert np.sum((z - s) ** 2) <= np.sum((z - y) ** 2) + 1e-12

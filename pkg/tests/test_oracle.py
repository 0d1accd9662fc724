import numpy as np
import pytest

from pgprune.errors import CapacityError
from pgprune.oracle import (
    EnumerableProblem,
    all_masks,
    brute_force_best_mask,
    check_best_mask,
    check_projection_oracle,
    estimator_stats,
    exact_grad_phi,
    exact_phi,
    fd_grad_phi,
    mask_index,
    mask_probs,
    projection_oracle,
    random_table,
    run_property_checks,
)


def l1_problem(n):
    return EnumerableProblem(n, loss_fn=lambda m: np.atleast_2d(m).sum(axis=1).astype(float))


def test_all_masks_indexing():
    masks = all_masks(3)
    assert masks.shape == (8, 3)
    np.testing.assert_array_equal(masks[5], [1, 0, 1])
    np.testing.assert_array_equal(mask_index(masks), np.arange(8))


def test_phi_examples():
    assert exact_phi(l1_problem(2), [0.3, 0.6]) == pytest.approx(0.9)
    p = EnumerableProblem(3, table=random_table(3, 0))
    assert exact_phi(p, [1.0, 0.0, 1.0]) == p.table[5]
    const = EnumerableProblem(4, table=np.full(16, 2.5))
    assert exact_phi(const, [0.1, 0.5, 0.7, 0.2]) == pytest.approx(2.5)


def test_grad_examples():
    np.testing.assert_allclose(exact_grad_phi(l1_problem(4), [0.2, 0.4, 0.6, 0.8]), np.ones(4), atol=1e-12)
    const = EnumerableProblem(3, table=np.full(8, -1.0))
    np.testing.assert_allclose(exact_grad_phi(const, [0.3, 0.5, 0.9]), 0.0, atol=1e-12)


def test_grad_vs_finite_differences():
    rng = np.random.default_rng(0)
    for t in range(100):
        n = int(rng.integers(1, 8))
        p = EnumerableProblem(n, table=random_table(n, t))
        s = rng.uniform(0.05, 0.95, n)
        fd = fd_grad_phi(p, s)
        np.testing.assert_allclose(exact_grad_phi(p, s), fd, rtol=1e-4, atol=1e-9)


def test_normalization(rng):
    for n in (1, 5, 12):
        assert mask_probs(rng.random(n), all_masks(n)).sum() == pytest.approx(1.0, abs=1e-10)


def test_caps():
    with pytest.raises(CapacityError):
        EnumerableProblem(21, table=np.zeros(2**21))
    with pytest.raises(CapacityError):
        brute_force_best_mask(l1_problem(21), 3)
    big = l1_problem(13)
    with pytest.raises(CapacityError):
        exact_phi(big, np.full(13, 0.5))
    with pytest.raises(ValueError):
        EnumerableProblem(3, table=np.zeros(7))


def test_estimator_means_within_se():
    p = EnumerableProblem(5, table=random_table(5, 3))
    s = np.array([0.2, 0.4, 0.5, 0.7, 0.9])
    stats = estimator_stats(p, s, exact_phi(p, s), 50_000, seed=2)
    exact = exact_grad_phi(p, s)
    assert np.all(np.abs(stats.plain_mean - exact) < 3 * stats.plain_se)
    assert np.all(np.abs(stats.baseline_mean - exact) < 3 * stats.baseline_se)


def test_constant_loss_baseline_has_zero_variance():
    p = EnumerableProblem(4, table=np.full(16, 3.0))
    stats = estimator_stats(p, np.full(4, 0.4), 3.0, 1000)
    assert np.all(stats.baseline_var == 0)


def test_zero_baseline_equals_plain():
    from pgprune.oracle import single_sample_estimates

    p = EnumerableProblem(4, table=random_table(4, 1))
    s = np.full(4, 0.3)
    a = single_sample_estimates(p, s, 0.0, 500, (9, 0))
    assert np.array_equal(a, single_sample_estimates(p, s, 0.0, 500, (9, 0)))


def test_brute_force_separable_and_ties():
    c = np.array([0.5, 3.0, 1.0, 2.0])
    np.testing.assert_array_equal(brute_force_best_mask(EnumerableProblem.separable(c), 2), [0, 1, 0, 1])
    np.testing.assert_array_equal(brute_force_best_mask(EnumerableProblem.separable(c), 4), [1, 1, 1, 1])
    flat = EnumerableProblem(3, table=np.zeros(8))
    np.testing.assert_array_equal(brute_force_best_mask(flat, 1), [0, 0, 0])
    assert check_best_mask().passed


def test_projection_oracle_examples():
    np.testing.assert_allclose(projection_oracle([0.9, 0.9, 0.9], 1.5), [0.5, 0.5, 0.5])
    np.testing.assert_allclose(projection_oracle([1.0, 1.0], 2.0, [1.0, 3.0]), [0.8, 0.4])
    np.testing.assert_allclose(projection_oracle([5.0, 5.0], 1.0), [0.5, 0.5])
    np.testing.assert_allclose(projection_oracle([2.0, -1.0], 2.0), [1.0, 0.0])


def test_property_suite_detects_corruption():
    assert all(r.passed for r in run_property_checks(quick=True))
    bad = check_projection_oracle(lambda z, K: np.clip(z, 0, 1), instances=50)
    assert not bad.passed and bad.line().startswith("FAIL")

"""Ground truth by enumeration, for testing the optimizer at toy sizes.

Masks are indexed by ``k = sum_i m_i 2^i``. A problem's loss table lists
``L(m)`` in that order.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import CapacityError
from .masking import grad_log_prob, rng_for, sample_mask
from .optimizer import per_sample_gradients
from .projection import project

GRAD_CAP = 12
SEARCH_CAP = 20


def all_masks(n: int) -> np.ndarray:
    """Every binary mask of length ``n``, row ``k`` holding the bits of ``k``."""
    k = np.arange(2**n, dtype=np.int64)
    return ((k[:, None] >> np.arange(n)) & 1).astype(np.int8)


def mask_index(masks) -> np.ndarray:
    masks = np.atleast_2d(masks).astype(np.int64)
    return masks @ (1 << np.arange(masks.shape[1], dtype=np.int64))


@dataclass
class EnumerableProblem:
    """A loss over binary masks of length ``n``.

    Either ``table`` (length ``2**n``) or ``loss_fn`` mapping ``[M, n]`` masks
    to ``[M]`` losses must be given. A loss function may have any ``n``; the
    enumeration oracles enforce their own caps.
    """

    n: int
    table: np.ndarray | None = None
    loss_fn: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.table is None and self.loss_fn is None:
            raise ValueError("need a loss table or a loss function")
        if self.table is not None:
            if self.n > SEARCH_CAP:
                raise CapacityError(f"loss tables are capped at n <= {SEARCH_CAP}")
            self.table = np.asarray(self.table, dtype=np.float64)
            if self.table.shape != (2**self.n,):
                raise ValueError(f"loss table needs {2**self.n} entries")

    @classmethod
    def separable(cls, c) -> "EnumerableProblem":
        """``L(m) = sum_i c_i (1 - m_i)``: pruning unit ``i`` costs ``c_i``."""
        c = np.asarray(c, dtype=np.float64)
        return cls(len(c), loss_fn=lambda m: (1 - np.atleast_2d(m)) @ c)

    def losses(self, masks) -> np.ndarray:
        masks = np.atleast_2d(masks)
        if self.table is not None:
            return self.table[mask_index(masks)]
        return np.asarray(self.loss_fn(masks), dtype=np.float64)

    def evaluator(self):
        """Adapter to the optimizer's ``(mask, batch) -> float`` interface."""
        return lambda mask, batch=None: float(self.losses(mask)[0])

    def full_table(self) -> np.ndarray:
        return self.table if self.table is not None else self.losses(all_masks(self.n))


def _require(problem: EnumerableProblem, cap: int) -> None:
    if problem.n > cap:
        raise CapacityError(f"this oracle enumerates at most n = {cap} units, got {problem.n}")


def mask_probs(s, masks) -> np.ndarray:
    """``p(m | s)`` for each row, unclamped so that 0/1 scores are point masses."""
    s = np.asarray(s, dtype=np.float64)
    return np.prod(np.where(masks == 1, s, 1.0 - s), axis=1)


def exact_phi(problem: EnumerableProblem, s) -> float:
    _require(problem, GRAD_CAP)
    masks = all_masks(problem.n)
    return float(mask_probs(s, masks) @ problem.full_table())


def exact_grad_phi(problem: EnumerableProblem, s) -> np.ndarray:
    _require(problem, GRAD_CAP)
    masks = all_masks(problem.n)
    weights = mask_probs(s, masks) * problem.full_table()
    return weights @ grad_log_prob(s, masks)


def fd_grad_phi(problem: EnumerableProblem, s, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of :func:`exact_phi`."""
    s = np.asarray(s, dtype=np.float64)
    out = np.empty_like(s)
    for i in range(s.size):
        e = np.zeros_like(s)
        e[i] = h
        out[i] = (exact_phi(problem, s + e) - exact_phi(problem, s - e)) / (2 * h)
    return out


@dataclass
class EstimatorStats:
    plain_mean: np.ndarray
    plain_var: np.ndarray
    baseline_mean: np.ndarray
    baseline_var: np.ndarray
    n_trials: int

    @property
    def plain_se(self) -> np.ndarray:
        return np.sqrt(self.plain_var / self.n_trials)

    @property
    def baseline_se(self) -> np.ndarray:
        return np.sqrt(self.baseline_var / self.n_trials)

    @property
    def variance_ratio(self) -> np.ndarray:
        return self.baseline_var / self.plain_var


def single_sample_estimates(problem: EnumerableProblem, s, delta: float, n_trials: int, seed) -> np.ndarray:
    """``n_trials`` independent one-mask gradient estimates, ``[n_trials, n]``."""
    s = np.asarray(s, dtype=np.float64)
    masks = sample_mask(np.broadcast_to(s, (n_trials, s.size)), rng_for(*np.atleast_1d(seed)))
    return per_sample_gradients(s, masks, problem.losses(masks), delta)


def estimator_stats(problem: EnumerableProblem, s, delta: float, n_trials: int, seed: int = 0) -> EstimatorStats:
    """Monte Carlo mean/variance of the plain and baseline single-sample estimators.

    The two estimators use independent mask streams.
    """
    _require(problem, GRAD_CAP)
    plain = single_sample_estimates(problem, s, 0.0, n_trials, (seed, 0))
    base = single_sample_estimates(problem, s, delta, n_trials, (seed, 1))
    return EstimatorStats(plain.mean(0), plain.var(0, ddof=1), base.mean(0), base.var(0, ddof=1), n_trials)


def brute_force_best_mask(problem: EnumerableProblem, K: float) -> np.ndarray:
    """Minimum-loss mask with at most ``K`` retained units; ties go to the lexicographically smallest."""
    _require(problem, SEARCH_CAP)
    masks = all_masks(problem.n)
    feasible = masks[masks.sum(axis=1) <= K + 1e-12]
    losses = problem.losses(feasible)
    best = feasible[losses == losses.min()]
    # lexicographic order on (m_0, m_1, ...)
    order = np.lexsort(best.T[::-1])
    return best[order[0]].copy()


@functools.lru_cache(maxsize=None)
def _assignments(n: int) -> np.ndarray:
    """All ``3**n`` labelings of coordinates as 0 (at zero), 1 (at one), 2 (interior)."""
    return np.array(list(itertools.product((0, 1, 2), repeat=n)), dtype=np.int8)


def projection_oracle(z, K: float, w=None) -> np.ndarray:
    """Exact projection onto ``{w^T s <= K} ∩ [0,1]^n`` by active-set enumeration.

    Every coordinate is labelled as sitting at 0, at 1 or strictly inside.
    With the budget inactive the answer is the clamp; with it active the
    interior block is ``z_i - nu w_i`` and ``nu`` follows from the budget
    equation. Among labelings that satisfy the KKT sign conditions, the
    candidate closest to ``z`` wins. Exponential in n, for tiny problems only.
    """
    z = np.asarray(z, dtype=np.float64)
    n = z.size
    w = np.ones(n) if w is None else np.asarray(w, dtype=np.float64)
    clamp = np.clip(z, 0.0, 1.0)
    if w @ clamp <= K + 1e-12:
        return clamp
    a = _assignments(n)
    lower, upper, inner = a == 0, a == 1, a == 2
    tol = 1e-12
    cands = [(a == 1).astype(np.float64)]  # binding budget with no interior coordinate
    ok = [cands[0] @ w <= K + tol]
    has_inner = inner.any(axis=1)
    li, up, inn = lower[has_inner], upper[has_inner], inner[has_inner]
    nu = (inn @ (w * z) + up @ w - K) / (inn @ (w * w))
    shifted = z[None] - nu[:, None] * w[None]
    valid = nu >= -tol
    valid &= ~np.any(li & (shifted > tol), axis=1)
    valid &= ~np.any(up & (shifted < 1 - tol), axis=1)
    valid &= ~np.any(inn & ((shifted < -tol) | (shifted > 1 + tol)), axis=1)
    cands.append(np.where(li, 0.0, np.where(up, 1.0, shifted)))
    ok.append(valid)
    cand, ok = np.concatenate(cands), np.concatenate(ok)
    dist = np.where(ok, np.sum((cand - z) ** 2, axis=1), np.inf)
    return cand[np.argmin(dist)]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def random_table(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).uniform(0.0, 1.0, 2**n)


def check_normalization(n: int = 10, trials: int = 20, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    masks = all_masks(n)
    worst = max(abs(mask_probs(rng.random(n), masks).sum() - 1.0) for _ in range(trials))
    return CheckResult("probability normalization", worst <= 1e-10, f"max |sum p - 1| = {worst:.2e}")


def check_grad_fd(n_tables: int = 100, n: int = 6, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in range(n_tables):
        problem = EnumerableProblem(n, table=random_table(n, seed * 1000 + t))
        s = rng.uniform(0.05, 0.95, n)
        g, fd = exact_grad_phi(problem, s), fd_grad_phi(problem, s)
        worst = max(worst, float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-8))))
    return CheckResult("exact gradient vs finite differences", worst <= 1e-4, f"max rel err = {worst:.2e}")


def check_unbiased(n: int = 10, n_trials: int = 200_000, seed: int = 7) -> CheckResult:
    problem = EnumerableProblem(n, table=random_table(n, seed))
    s = np.random.default_rng(seed + 1).uniform(0.2, 0.8, n)
    exact = exact_grad_phi(problem, s)
    stats = estimator_stats(problem, s, 0.0, n_trials, seed)
    z = np.abs(stats.plain_mean - exact) / stats.plain_se
    return CheckResult("plain estimator unbiased", bool(np.all(z < 3)), f"max |z| = {z.max():.2f}")


def spread_table(n: int, seed: int, offset: float = 5.0, scale: float = 0.3) -> np.ndarray:
    """Loss table whose mean is far above its spread, ``offset + scale * N(0, 1)``."""
    return offset + scale * np.random.default_rng(seed).standard_normal(2**n)


def check_baseline(n: int = 10, n_trials: int = 200_000, seed: int = 11) -> CheckResult:
    problem = EnumerableProblem(n, table=spread_table(n, seed))
    s = np.random.default_rng(seed + 1).uniform(0.2, 0.8, n)
    delta = exact_phi(problem, s)
    stats = estimator_stats(problem, s, delta, n_trials, seed)
    se = np.sqrt(stats.plain_se**2 + stats.baseline_se**2)
    z = np.abs(stats.plain_mean - stats.baseline_mean) / se
    ratio = stats.variance_ratio
    ok = bool(np.all(z < 3) and np.all(ratio < 0.95))
    return CheckResult("baseline keeps the mean and cuts variance", ok, f"max |z| = {z.max():.2f}, max var ratio = {ratio.max():.4f}")


def check_projection_oracle(projector=project, instances: int = 500, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(1, 9))
        z = rng.uniform(-1.0, 2.0, n)
        K = float(rng.uniform(0.1, n))
        worst = max(worst, float(np.max(np.abs(projector(z, K) - projection_oracle(z, K)))))
    return CheckResult("projection matches active-set oracle", worst <= 1e-6, f"max inf-norm gap = {worst:.2e}")


def check_projection_feasible(projector=project, instances: int = 10_000, max_n: int = 10_000, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        # log-uniform sizes so small and large problems are both covered
        n = int(np.exp(rng.uniform(0.0, np.log(max_n))))
        z = rng.normal(0.5, 1.0, n)
        K = float(rng.uniform(0.05, 1.0) * n)
        s = projector(z, K)
        worst = max(worst, float(s.sum() - K), float(-s.min()), float(s.max() - 1.0))
    return CheckResult("projection feasibility", worst <= 1e-8, f"max residual = {worst:.2e}")


def check_best_mask(n: int = 12, seed: int = 0) -> CheckResult:
    c = np.random.default_rng(seed).permutation(n) + 1.0
    K = n // 2
    best = brute_force_best_mask(EnumerableProblem.separable(c), K)
    expected = np.zeros(n, dtype=np.int8)
    expected[np.argsort(-c)[:K]] = 1
    return CheckResult("brute-force search finds the top-K set", bool(np.array_equal(best, expected)), f"n = {n}, K = {K}")


def run_property_checks(projector=project, quick: bool = False) -> list[CheckResult]:
    """The oracle suite; ``quick`` shrinks trial counts for smoke runs."""
    trials = 20_000 if quick else 200_000
    return [
        check_normalization(),
        check_grad_fd(n_tables=10 if quick else 100),
        check_unbiased(n_trials=trials),
        check_baseline(n_trials=trials),
        check_projection_oracle(projector),
        check_projection_feasible(projector, instances=500 if quick else 10_000),
        check_best_mask(),
    ]

"""Euclidean projection onto ``{w^T s <= K} ∩ [0, 1]^n``.

The projection is a shifted clamp ``clip(z - nu * w, 0, 1)``. If the plain
clamp already meets the budget, ``nu = 0``; otherwise ``nu > 0`` is the root of
the monotone residual ``w^T clip(z - nu * w, 0, 1) - K``, found by bisection.
Unit weights give the unit-count budget ``1^T s <= K``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError

TOL = 1e-10
MAX_ITER = 200


@dataclass(frozen=True)
class Budget:
    """Retained budget ``K``. ``weights`` is set only in param-weighted mode."""

    K: float
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.ndim != 1 or np.any(w <= 0) or not np.all(np.isfinite(w)):
                raise ConfigError("budget weights must be positive and finite")
            object.__setattr__(self, "weights", w)
        if not self.K > 0:
            raise ConfigError("budget K must be positive")

    @property
    def mode(self) -> str:
        return "unit_count" if self.weights is None else "param_weighted"

    @classmethod
    def retained(cls, rho: float, n: int, weights=None) -> "Budget":
        """Budget keeping a fraction ``rho`` of the units (or of their total weight)."""
        if not 0 < rho <= 1:
            raise ConfigError(f"retained fraction must be in (0, 1], got {rho}")
        if weights is None:
            return cls(rho * n)
        weights = np.asarray(weights, dtype=np.float64)
        return cls(rho * float(weights.sum()), weights)

    def used(self, s) -> float:
        s = np.asarray(s, dtype=np.float64)
        return float(s.sum() if self.weights is None else self.weights @ s)


def _clamp_shift(z, nu, w):
    return np.clip(z - nu * w, 0.0, 1.0)


def budget_shift(z, K: float, w=1.0) -> float:
    """Root ``nu`` of ``w^T clip(z - nu w, 0, 1) = K`` by bisection (may be negative).

    Returns the end of the final bracket on the feasible side, so the
    shifted clamp never exceeds ``K`` by more than the residual tolerance.
    """
    z = np.asarray(z, dtype=np.float64)
    w = np.broadcast_to(np.asarray(w, dtype=np.float64), z.shape)
    if not np.all(np.isfinite(z)):
        raise NumericError("cannot project a non-finite vector")
    # residual(lo) = w^T 1 - K >= 0 and residual(hi) = -K < 0
    lo, hi = float(np.min((z - 1.0) / w)), float(np.max(z / w))
    for _ in range(MAX_ITER):
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        r = w @ _clamp_shift(z, mid, w) - K
        if abs(r) < TOL:
            return mid
        if r > 0:
            lo = mid
        else:
            hi = mid
    return hi


def project_weighted(z, K: float, w) -> np.ndarray:
    """Project ``z`` onto ``{w^T s <= K} ∩ [0, 1]^n`` for positive weights ``w``."""
    z = np.asarray(z, dtype=np.float64)
    w = np.broadcast_to(np.asarray(w, dtype=np.float64), z.shape)
    if not np.all(np.isfinite(z)):
        raise NumericError("cannot project a non-finite vector")
    s = np.clip(z, 0.0, 1.0)
    if w @ s <= K:
        return s
    nu = max(0.0, budget_shift(z, K, w))
    s = _clamp_shift(z, nu, w)
    # absorb the last ulps of summation error so the budget holds
    excess = w @ s - K
    interior = (s > 0) & (s < 1)
    if excess > 0 and interior.any():
        s = _clamp_shift(z, nu + excess / (w[interior] @ w[interior]), w)
    return s


def project(z, K: float | Budget) -> np.ndarray:
    """Project onto ``{1^T s <= K} ∩ [0, 1]^n`` (or a weighted Budget)."""
    if isinstance(K, Budget):
        if K.weights is not None:
            return project_weighted(z, K.K, K.weights)
        K = K.K
    return project_weighted(z, K, 1.0)

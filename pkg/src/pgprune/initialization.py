"""Initial retention probabilities from importance metrics or at random."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ConfigError, DataError
from .masking import GranularityMap
from .model import ActivationStats, hidden_states
from .projection import Budget, budget_shift, project

_LO, _HI = np.finfo(np.float64).tiny, 1.0 - np.finfo(np.float64).epsneg


@dataclass(frozen=True)
class MetricScores:
    x: np.ndarray
    source: str = ""

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 1 or not np.all(np.isfinite(x)):
            raise DataError("metric scores must be a finite vector")
        object.__setattr__(self, "x", x)


def sigmoid_norm(x) -> np.ndarray:
    """``sigmoid((x - mean) / std)`` with the population std; constant input gives 0.5."""
    x = np.asarray(getattr(x, "x", x), dtype=np.float64)
    std = x.std()
    if std == 0 or not np.isfinite(std):
        return np.full(x.shape, 0.5)
    z = (x - x.mean()) / std
    return np.clip(0.5 * (1.0 + np.tanh(0.5 * z)), _LO, _HI)


def score_const(decisions, c: float = 0.8) -> np.ndarray:
    """Map kept units of a binary decision to ``c`` and pruned ones to ``1 - c``."""
    if not 0.5 < c < 1:
        raise ConfigError(f"score_const needs c in (0.5, 1), got {c}")
    d = np.asarray(decisions)
    if not np.isin(d, (0, 1)).all():
        raise ConfigError("decisions must be binary")
    return np.where(d == 1, c, 1.0 - c).astype(np.float64)


def random_init(unit_count: int, rho: float, seed: int = 0) -> np.ndarray:
    """Uniform draws shifted so their clamp sums to ``rho * n`` exactly.

    A shift (rather than a multiplicative rescale) keeps every value in
    [0, 1] while hitting the target mean; the result is already feasible.
    """
    if not 0 < rho <= 1:
        raise ConfigError(f"retained fraction must be in (0, 1], got {rho}")
    u = np.random.default_rng(seed).random(unit_count)
    K = rho * unit_count
    s = np.clip(u - budget_shift(u, K), 0.0, 1.0)
    return project(s, Budget(K))


def builtin_metric(ckpt, batches: Iterable, gmap: GranularityMap) -> MetricScores:
    """Activation-weighted magnitude score per unit.

    For a head, sum over its context dimensions ``r`` of
    ``rms(context_r) * sum_j |wo[r, j]|``; for an MLP channel,
    ``rms(hidden_c) * sum_j |w_down[c, j]|``; a layer scores the sum over its
    heads and channels. Activations come from dense forwards over ``batches``.
    """
    stats = ActivationStats()
    seen = 0
    for batch in batches:
        hidden_states(ckpt, batch.inputs, stats=stats)
        seen += 1
    if not seen:
        raise DataError("builtin metric needs at least one batch")
    arch = ckpt.arch
    dh = arch.d_head
    head_scores, chan_scores = [], []
    for l in range(arch.n_layers):
        p = f"layers.{l}."
        if arch.heads_in(l):
            per_dim = stats.rms(p + "attn_ctx") * np.abs(ckpt[p + "wo"]).sum(axis=1)
            head_scores.append(per_dim.reshape(-1, dh).sum(axis=1))
        else:
            head_scores.append(np.zeros(0))
        if arch.ff_in(l):
            chan_scores.append(stats.rms(p + "mlp_hidden") * np.abs(ckpt[p + "w_down"]).sum(axis=1))
        else:
            chan_scores.append(np.zeros(0))
    x = np.empty(gmap.unit_count)
    for i, u in enumerate(gmap.units):
        if u.kind == "head":
            x[i] = head_scores[u.layer][u.index]
        elif u.kind == "mlp_channel":
            x[i] = chan_scores[u.layer][u.index]
        else:
            x[i] = head_scores[u.layer].sum() + chan_scores[u.layer].sum()
    return MetricScores(x, "builtin")

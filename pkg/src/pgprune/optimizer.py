"""Projected SGD on Bernoulli retention probabilities.

The optimizer only ever sees the network through a loss evaluator, a callable
``(mask, batch) -> float``. Each step samples ``n_samples`` masks, forms the
score-function gradient with a moving-average baseline subtracted from the
losses, takes a gradient step, and projects back onto the retained budget::

    g     = mean_i (L(m_i) - delta) * (m_i - s) / (s (1 - s))
    s     = proj(s - lr * g)
    delta = (T - 1) / T * delta + sum_i L(m_i) / (n_samples * T)

The gradient uses the baseline from before this step's update.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Iterator, Protocol

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .masking import grad_log_prob, rng_for, sample_mask
from .projection import Budget, project


class LossEvaluator(Protocol):
    def __call__(self, mask: np.ndarray, batch: Any) -> float: ...


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 2e-3
    batch_size: int = 8
    n_samples: int = 2
    baseline_window: int = 5
    retained_fraction: float = 0.5
    budget_mode: str = "unit_count"
    total_steps: int | None = None
    epochs: float = 1.0
    seed: int = 0
    estimator: str = "baseline"
    warm_start_baseline: bool = False
    carry_baseline: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1 or self.n_samples < 1 or self.baseline_window < 1:
            raise ConfigError("batch_size, n_samples and baseline_window must be >= 1")
        if not 0 < self.retained_fraction <= 1:
            raise ConfigError("retained_fraction must be in (0, 1]")
        if self.budget_mode not in ("unit_count", "param_weighted"):
            raise ConfigError(f"unknown budget_mode {self.budget_mode!r}")
        if self.estimator not in ("baseline", "plain"):
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if self.total_steps is not None and self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")


@dataclass
class TrainState:
    s: np.ndarray
    delta: float = 0.0
    step: int = 0
    losses: deque = field(default_factory=lambda: deque(maxlen=5))
    baseline_fresh: bool = True


def per_sample_gradients(s, masks, losses, delta: float = 0.0) -> np.ndarray:
    """Rows ``(L_i - delta) * grad log p(m_i | s)`` for masks ``[N, n]`` and losses ``[N]``."""
    adv = np.asarray(losses, dtype=np.float64) - delta
    return adv[:, None] * grad_log_prob(s, np.atleast_2d(masks))


def policy_gradient(s, masks, losses, delta: float = 0.0) -> np.ndarray:
    """Average of the per-sample estimates over the sampled masks."""
    return per_sample_gradients(s, masks, losses, delta).mean(axis=0)


def update(s, delta: float, masks, losses, cfg: OptimizerConfig, budget: Budget) -> tuple[np.ndarray, float]:
    """Apply one gradient step and baseline update for already-evaluated masks."""
    losses = np.asarray(losses, dtype=np.float64)
    g = policy_gradient(s, masks, losses, delta if cfg.estimator == "baseline" else 0.0)
    s_new = project(np.asarray(s, dtype=np.float64) - cfg.learning_rate * g, budget)
    T = cfg.baseline_window
    delta_new = (T - 1) / T * delta + losses.sum() / (len(losses) * T)
    return s_new, float(delta_new)


def step(state: TrainState, batch, evaluator: LossEvaluator, cfg: OptimizerConfig, budget: Budget) -> TrainState:
    """One update; returns a new state and leaves ``state`` untouched."""
    s = state.s
    masks = np.stack([sample_mask(s, rng_for(cfg.seed, state.step, i)) for i in range(cfg.n_samples)])
    losses = np.array([float(evaluator(m, batch)) for m in masks])
    if not np.all(np.isfinite(losses)):
        raise NumericError(f"non-finite loss at step {state.step}")
    delta = state.delta
    if cfg.warm_start_baseline and state.baseline_fresh:
        delta = float(losses.mean())
    s_new, delta_new = update(s, delta, masks, losses, cfg, budget)
    history = deque(state.losses, maxlen=cfg.baseline_window)
    history.append(float(losses.mean()))
    return TrainState(s_new, delta_new, state.step + 1, history, baseline_fresh=False)


@dataclass(frozen=True)
class Stage:
    retained_fraction: float
    steps: int


def fixed_schedule(cfg: OptimizerConfig, steps: int) -> list[Stage]:
    return [Stage(cfg.retained_fraction, steps)]


def progressive_schedule(start_rho: float, end_rho: float, rho_step: float, steps_per_stage: int) -> list[Stage]:
    """Stages with retained fraction shrinking from ``start_rho`` to ``end_rho``.

    Pruning 5% -> 50% in 5% steps is ``progressive_schedule(0.95, 0.5, 0.05, k)``.
    """
    if not (0 < end_rho < start_rho <= 1) or rho_step <= 0 or steps_per_stage < 0:
        raise ConfigError("progressive schedule needs 0 < end < start <= 1, step > 0, steps >= 0")
    n_stages = (start_rho - end_rho) / rho_step
    if abs(n_stages - round(n_stages)) > 1e-9:
        raise ConfigError("(start - end) must be a whole number of steps")
    return [Stage(round(start_rho - k * rho_step, 12), steps_per_stage) for k in range(int(round(n_stages)) + 1)]


@dataclass
class TrainResult:
    s: np.ndarray
    log: list[dict]
    state: TrainState
    stage_scores: list[np.ndarray] = field(default_factory=list)


def _log_record(state: TrainState, budget: Budget, rho: float) -> dict:
    return {
        "step": state.step,
        "loss": state.losses[-1],
        "delta": state.delta,
        "retained_fraction": rho,
        "budget_used": budget.used(state.s),
        "s_min": float(state.s.min()),
        "s_max": float(state.s.max()),
    }


def run(
    evaluator: LossEvaluator,
    batch_stream: Iterable,
    init_s,
    cfg: OptimizerConfig,
    schedule: list[Stage] | int,
    weights=None,
    callback: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train through ``schedule`` (or a step count at ``cfg.retained_fraction``).

    Each stage projects the incoming scores onto its own budget first, so the
    continuous scores of one stage seed the next. The baseline restarts at 0
    per stage unless ``cfg.carry_baseline``; ``warm_start_baseline`` sets it
    to the first sampled losses whenever it restarts.
    """
    if isinstance(schedule, int):
        schedule = fixed_schedule(cfg, schedule)
    if cfg.budget_mode == "param_weighted" and weights is None:
        raise ConfigError("param_weighted budgets need per-unit weights")
    w = weights if cfg.budget_mode == "param_weighted" else None
    s = np.asarray(init_s, dtype=np.float64)
    if s.ndim != 1 or not np.all(np.isfinite(s)):
        raise NumericError("initial scores must be a finite vector")
    batches: Iterator = iter(batch_stream)
    state = TrainState(s, 0.0, 0, deque(maxlen=cfg.baseline_window))
    log: list[dict] = []
    stage_scores = []
    for k, stage in enumerate(schedule):
        budget = Budget.retained(stage.retained_fraction, s.size, w)
        state = replace(state, s=project(state.s, budget))
        if k > 0 and not cfg.carry_baseline:
            state = replace(state, delta=0.0, baseline_fresh=True)
        for _ in range(stage.steps):
            try:
                batch = next(batches)
            except StopIteration:
                raise DataError(f"batch stream ran out at step {state.step}") from None
            state = step(state, batch, evaluator, cfg, budget)
            rec = _log_record(state, budget, stage.retained_fraction)
            log.append(rec)
            if callback is not None:
                callback(rec)
        stage_scores.append(state.s.copy())
    return TrainResult(state.s, log, state, stage_scores)


def steps_per_epoch(n_segments: int, batch_size: int) -> int:
    if n_segments < batch_size:
        raise DataError(f"corpus of {n_segments} segments is shorter than one batch of {batch_size}")
    return math.ceil(n_segments / batch_size)

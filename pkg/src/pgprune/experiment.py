"""Desk-scale pruning experiment on a random toy transformer.

A teacher corpus is sampled from the dense toy model, a held-out set from a
separate seed. Scores start from the builtin metric through Sigmoid-Norm and
are trained with a progressive schedule visiting every requested retained
fraction in decreasing order, so one run yields a score vector per fraction.
Each extracted mask is compared against random masks of the same size and
against the metric's own mask.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .arch import ArchConfig
from .data import SegmentStore, batches, epochs
from .evaluation import extract_mask, perplexity, retained_count
from .initialization import builtin_metric, sigmoid_norm
from .masking import GranularityMap
from .model import ModelCheckpoint, masked_loss_evaluator, teacher_sample, toy_checkpoint
from .optimizer import OptimizerConfig, Stage, run, steps_per_epoch

TOY_ARCH = ArchConfig(vocab_size=512, d_model=128, n_layers=4, n_heads=4, d_ff=512, max_seq_len=128)
TOY_LAYER_SCALES = (1.5, 1.0, 0.7, 0.4)


@dataclass
class ToySetup:
    ckpt: ModelCheckpoint
    train: SegmentStore
    heldout: SegmentStore
    gmap: GranularityMap
    seed: int


def make_toy_setup(
    seed: int,
    n_train: int = 4096,
    n_heldout: int = 64,
    seq_len: int = 128,
    kinds=("head",),
    arch: ArchConfig = TOY_ARCH,
) -> ToySetup:
    ckpt = toy_checkpoint(arch, seed, unit_spread=1.0, layer_scales=TOY_LAYER_SCALES)
    train = teacher_sample(ckpt, seed, n_train, seq_len)
    heldout = teacher_sample(ckpt, seed + 10_000, n_heldout, seq_len)
    return ToySetup(ckpt, train, heldout, GranularityMap.from_arch(arch, kinds), seed)


def random_masks(n: int, rho: float, count: int, seed: int) -> list[np.ndarray]:
    k = retained_count(rho, n)
    out = []
    for i in range(count):
        m = np.zeros(n, dtype=np.int8)
        m[np.random.default_rng([seed, i]).choice(n, k, replace=False)] = 1
        out.append(m)
    return out


@dataclass
class RhoResult:
    rho: float
    scores: np.ndarray
    ppl_optimized: float
    ppl_optimized_local: float
    ppl_metric: float
    ppl_metric_local: float
    ppl_random: list[float] = field(default_factory=list)

    @property
    def ppl_random_mean(self) -> float:
        return float(np.mean(self.ppl_random))


def run_toy_pruning(
    setup: ToySetup,
    rhos=(0.7, 0.6, 0.5),
    learning_rate: float = 0.02,
    epochs_total: float = 1.0,
    n_random: int = 20,
    metric_batches: int = 4,
    log=None,
) -> list[RhoResult]:
    """Train once through ``rhos`` and evaluate every stage's scores."""
    rhos = sorted(rhos, reverse=True)
    ckpt, gmap = setup.ckpt, setup.gmap
    t0 = time.perf_counter()
    metric = builtin_metric(ckpt, list(batches(setup.train, 8, shuffle=False))[:metric_batches], gmap).x
    cfg = OptimizerConfig(learning_rate=learning_rate, seed=setup.seed, warm_start_baseline=True)
    total = int(round(epochs_total * steps_per_epoch(setup.train.count, cfg.batch_size)))
    per_stage = total // len(rhos)
    evaluator = masked_loss_evaluator(ckpt, gmap)
    stream = epochs(setup.train, cfg.batch_size, setup.seed)
    trained = run(evaluator, stream, sigmoid_norm(metric), cfg, [Stage(rho, per_stage) for rho in rhos])

    def ppl(mask):
        return perplexity(ckpt, setup.heldout, mask, gmap)

    results = []
    for rho, s in zip(rhos, trained.stage_scores):
        r = RhoResult(
            rho=rho,
            scores=s.copy(),
            ppl_optimized=ppl(extract_mask(s, rho, "global", gmap)),
            ppl_optimized_local=ppl(extract_mask(s, rho, "local", gmap)),
            ppl_metric=ppl(extract_mask(metric, rho, "global", gmap)),
            ppl_metric_local=ppl(extract_mask(metric, rho, "local", gmap)),
            ppl_random=[ppl(m) for m in random_masks(gmap.unit_count, rho, n_random, setup.seed)],
        )
        results.append(r)
        if log is not None:
            log(
                f"seed {setup.seed} rho {rho:.2f}: optimized {r.ppl_optimized:.3f} (local {r.ppl_optimized_local:.3f}) "
                f"metric {r.ppl_metric:.3f} (local {r.ppl_metric_local:.3f}) random-mean {r.ppl_random_mean:.3f} "
                f"[{time.perf_counter() - t0:.0f}s]"
            )
    return results

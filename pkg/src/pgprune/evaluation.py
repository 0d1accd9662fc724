"""Turning scores into a pruned model and measuring it."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .arch import ArchConfig
from .data import SegmentStore, batches
from .errors import ConfigError, DataError
from .masking import GranularityMap
from .model import ATTN_KEYS, MLP_KEYS, ModelCheckpoint, _head_cols, forward_nll

MODES = ("global", "local")


def retained_count(rho: float, n: int) -> int:
    """``ceil(rho * n)``, robust to float noise such as ``0.7 * 10``."""
    if not 0 < rho <= 1:
        raise ConfigError(f"retained fraction must be in (0, 1], got {rho}")
    return min(n, max(1, math.ceil(rho * n - 1e-9)))


def _top(s: np.ndarray, idx: np.ndarray, rho: float, weights) -> np.ndarray:
    # stable sort on -s: equal scores keep the lower unit index first
    order = idx[np.argsort(-s[idx], kind="stable")]
    if weights is None:
        return order[: retained_count(rho, idx.size)]
    budget = rho * weights[idx].sum() + 1e-9
    kept, used = [], 0.0
    for i in order:
        if used + weights[i] <= budget:
            kept.append(i)
            used += weights[i]
    return np.array(kept, dtype=np.int64)


def extract_mask(s, rho: float, mode: str = "global", gmap: GranularityMap | None = None, weights=None) -> np.ndarray:
    """Deterministic mask keeping the highest-scoring units.

    ``global`` ranks all units together. ``local`` ranks within each
    (layer, kind) group so every group keeps the same fraction. With
    ``weights`` the budget counts parameters and units are taken greedily in
    score order while they still fit.
    """
    s = np.asarray(s, dtype=np.float64)
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
    m = np.zeros(s.size, dtype=np.int8)
    if mode == "global":
        m[_top(s, np.arange(s.size), rho, weights)] = 1
    else:
        if gmap is None:
            raise ConfigError("local extraction needs the granularity map")
        for idx in gmap.groups().values():
            m[_top(s, idx, rho, weights)] = 1
    return m


def perplexity_from_nll(nll) -> float:
    nll = np.asarray(nll, dtype=np.float64)
    if nll.size == 0:
        raise DataError("no predicted tokens")
    return float(np.exp(nll.mean()))


def perplexity(ckpt: ModelCheckpoint, corpus: SegmentStore, mask=None, gmap=None, batch_size: int = 8) -> float:
    """``exp`` of the mean next-token NLL over every predicted position."""
    if corpus is None or corpus.count == 0:
        raise DataError("empty evaluation corpus")
    total, count = 0.0, 0
    for batch in batches(corpus, batch_size, shuffle=False):
        nll = forward_nll(ckpt, batch, mask, gmap)
        total += float(nll.sum())
        count += nll.size
    return math.exp(total / count)


def compact(ckpt: ModelCheckpoint, mask, gmap: GranularityMap) -> ModelCheckpoint:
    """Slice pruned heads, channels and layers out of the weights.

    A layer that keeps no heads (or no channels) keeps its norms and loses the
    block's weights; it stays in the model as identity on the residual. Layers
    pruned as whole units are dropped and the rest renumbered.
    """
    if gmap.arch != ckpt.arch:
        raise ConfigError("granularity map was built for a different architecture")
    keep = gmap.decode(mask)
    arch = ckpt.arch
    dh = arch.d_head
    out = {k: ckpt[k] for k in ("tok_embed", "final_norm", "lm_head")}
    heads, ffs = [], []
    for l in np.flatnonzero(keep.layers):
        src, dst = f"layers.{l}.", f"layers.{len(heads)}."
        out[dst + "attn_norm"] = ckpt[src + "attn_norm"]
        out[dst + "mlp_norm"] = ckpt[src + "mlp_norm"]
        kh = keep.heads[l]
        if kh.any():
            cols = _head_cols(kh, dh)
            for k in ATTN_KEYS:
                w = ckpt[src + k]
                out[dst + k] = np.ascontiguousarray(w[cols] if k == "wo" else w[:, cols])
        kc = np.flatnonzero(keep.channels[l])
        if kc.size:
            for k in MLP_KEYS:
                w = ckpt[src + k]
                out[dst + k] = np.ascontiguousarray(w[kc] if k == "w_down" else w[:, kc])
        heads.append(int(kh.sum()))
        ffs.append(int(kc.size))
    if not heads:
        raise ConfigError("compaction would remove every layer")
    dense = all(h == arch.n_heads for h in heads) and all(f == arch.d_ff for f in ffs)
    new_arch = ArchConfig(
        vocab_size=arch.vocab_size,
        d_model=arch.d_model,
        n_layers=len(heads),
        n_heads=arch.n_heads,
        d_ff=arch.d_ff,
        max_seq_len=arch.max_seq_len,
        rms_eps=arch.rms_eps,
        rope_base=arch.rope_base,
        head_counts=None if dense else tuple(heads),
        ff_dims=None if dense else tuple(ffs),
    )
    return ModelCheckpoint(new_arch, out)


def retained_params(mask, gmap: GranularityMap) -> int:
    m = gmap.check(mask).astype(bool)
    return int(gmap.unprunable_params() + gmap.param_counts[m].sum())


@dataclass
class PruneReport:
    mode: str
    retained_fraction: float
    total_units: int
    retained_units: int
    total_params: int
    retained_params: int
    param_fraction: float
    ppl_before: float | None = None
    ppl_after: float | None = None
    layers: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(self.layers[0]))
            writer.writeheader()
            writer.writerows(self.layers)


def report(mask, gmap: GranularityMap, rho: float, mode: str, ppl_before=None, ppl_after=None) -> PruneReport:
    m = gmap.check(mask).astype(bool)
    keep = gmap.decode(m)
    arch = gmap.arch
    layers = []
    for l in range(arch.n_layers):
        row = {"layer": l, "layer_retained": int(keep.layers[l])}
        if "head" in gmap.kinds:
            row["heads_retained"] = int(keep.heads[l].sum())
            row["heads_total"] = arch.heads_in(l)
            row["head_sparsity"] = 1 - row["heads_retained"] / max(1, arch.heads_in(l))
        if "mlp_channel" in gmap.kinds:
            row["channels_retained"] = int(keep.channels[l].sum())
            row["channels_total"] = arch.ff_in(l)
            row["channel_sparsity"] = 1 - row["channels_retained"] / max(1, arch.ff_in(l))
        layers.append(row)
    total = gmap.unprunable_params() + int(gmap.param_counts.sum())
    kept = retained_params(m, gmap)
    return PruneReport(
        mode=mode,
        retained_fraction=rho,
        total_units=gmap.unit_count,
        retained_units=int(m.sum()),
        total_params=total,
        retained_params=kept,
        param_fraction=kept / total,
        ppl_before=ppl_before,
        ppl_after=ppl_after,
        layers=layers,
    )

"""Toy LLaMA-style decoder with structural mask hooks.

Block layout (pre-norm, no biases, rotary q/k, SiLU-gated MLP)::

    x = x + attn(rmsnorm(x)) @ wo        # heads masked before wo
    x = x + (silu(h @ w_gate) * (h @ w_up)) @ w_down   # channels masked before w_down

A pruned head or channel is dropped from the computation, which equals
zeroing its contribution up to float reassociation. A pruned layer is the
identity on the residual stream. The residual width ``d_model`` is never
pruned.

Weights are stored input-major: ``wq`` is ``[d_model, heads * d_head]`` and a
layer computes ``h @ wq``. Head ``j`` owns columns ``j*d_head:(j+1)*d_head`` of
``wq/wk/wv`` and the same rows of ``wo``.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics as nx
from .arch import ArchConfig
from .data import CalibrationBatch, SegmentStore
from .errors import ConfigError, DataError, FormatError
from .masking import GranularityMap, StructuredMask

CKPT_MAGIC = b"MGPRUNE1"
ATTN_KEYS = ("wq", "wk", "wv", "wo")
MLP_KEYS = ("w_gate", "w_up", "w_down")


def expected_shapes(arch: ArchConfig) -> dict[str, tuple[int, ...]]:
    d, dh = arch.d_model, arch.d_head
    shapes = {"tok_embed": (arch.vocab_size, d)}
    for l in range(arch.n_layers):
        p = f"layers.{l}."
        shapes[p + "attn_norm"] = (d,)
        shapes[p + "mlp_norm"] = (d,)
        hd = arch.heads_in(l) * dh
        if hd:
            shapes.update({p + "wq": (d, hd), p + "wk": (d, hd), p + "wv": (d, hd), p + "wo": (hd, d)})
        f = arch.ff_in(l)
        if f:
            shapes.update({p + "w_gate": (d, f), p + "w_up": (d, f), p + "w_down": (f, d)})
    shapes["final_norm"] = (d,)
    shapes["lm_head"] = (d, arch.vocab_size)
    return shapes


@dataclass(frozen=True)
class ModelCheckpoint:
    arch: ArchConfig
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        want = expected_shapes(self.arch)
        if set(want) != set(self.tensors):
            missing = sorted(set(want) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(want))
            raise FormatError(f"checkpoint tensors do not match architecture (missing {missing}, extra {extra})")
        for name, shape in want.items():
            t = self.tensors[name]
            if tuple(t.shape) != shape:
                raise FormatError(f"{name}: shape {tuple(t.shape)}, expected {shape}")
            if t.dtype != nx.DTYPE:
                self.tensors[name] = nx.as_tensor(t)
            self.tensors[name].flags.writeable = False

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def param_count(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))


def save_checkpoint(path, ckpt: ModelCheckpoint) -> None:
    """``MGPRUNE1 | u64 header length | JSON header | f32 LE payloads``."""
    directory, offset, chunks = [], 0, []
    for name in expected_shapes(ckpt.arch):
        t = np.ascontiguousarray(ckpt.tensors[name], dtype="<f4")
        directory.append({"name": name, "shape": list(t.shape), "offset": offset})
        chunks.append(t.tobytes())
        offset += t.nbytes
    header = json.dumps({"arch": ckpt.arch.to_dict(), "tensors": directory}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<Q", len(header)) + header)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path) -> ModelCheckpoint:
    blob = Path(path).read_bytes()
    if blob[:8] != CKPT_MAGIC or len(blob) < 16:
        raise FormatError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack_from("<Q", blob, 8)
    try:
        header = json.loads(blob[16 : 16 + hlen].decode("utf-8"))
        arch = ArchConfig.from_dict(header["arch"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ConfigError) as exc:
        raise FormatError(f"{path}: bad header ({exc})") from exc
    base = 16 + hlen
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = math.prod(shape)
        start = base + entry["offset"]
        if start + 4 * n > len(blob):
            raise FormatError(f"{path}: tensor {entry['name']} runs past end of file")
        tensors[entry["name"]] = np.frombuffer(blob, dtype="<f4", count=n, offset=start).reshape(shape).astype(nx.DTYPE)
    return ModelCheckpoint(arch, tensors)


def rope_tables(arch: ArchConfig, positions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    half = arch.d_head // 2
    inv_freq = arch.rope_base ** (-np.arange(half, dtype=np.float64) / half)
    angles = np.outer(np.asarray(positions, dtype=np.float64), inv_freq)
    return np.cos(angles).astype(nx.DTYPE), np.sin(angles).astype(nx.DTYPE)


def apply_rope(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    """Rotate-half rotary embedding on the last axis; ``cos/sin`` are ``[T, d_head/2]``."""
    half = x.shape[-1] // 2
    x1, x2 = x[..., :half], x[..., half:]
    return np.concatenate([x1 * cos - x2 * sin, x1 * sin + x2 * cos], axis=-1)


def _head_cols(keep: np.ndarray, d_head: int) -> np.ndarray:
    heads = np.flatnonzero(keep)
    return (heads[:, None] * d_head + np.arange(d_head)).ravel()


def _attention(ckpt, l, h, keep_heads, cos, sin, causal, stats):
    arch = ckpt.arch
    p = f"layers.{l}."
    n_heads, dh = arch.heads_in(l), arch.d_head
    wq, wk, wv, wo = (ckpt[p + k] for k in ATTN_KEYS)
    if keep_heads is not None and not keep_heads.all():
        cols = _head_cols(keep_heads, dh)
        wq, wk, wv, wo = wq[:, cols], wk[:, cols], wv[:, cols], wo[cols]
        n_heads = int(keep_heads.sum())
    B, T, _ = h.shape

    def split(w):
        return nx.matmul(h, w).reshape(B, T, n_heads, dh).transpose(0, 2, 1, 3)

    q = apply_rope(split(wq), cos, sin)
    k = apply_rope(split(wk), cos, sin)
    v = split(wv)
    scores = nx.matmul(q, k.transpose(0, 1, 3, 2)) * nx.DTYPE(1.0 / math.sqrt(dh)) + causal
    ctx = nx.matmul(nx.softmax_rows(scores), v).transpose(0, 2, 1, 3).reshape(B, T, n_heads * dh)
    if stats is not None:
        stats.add(f"{p}attn_ctx", ctx)
    return nx.matmul(ctx, wo)


def _mlp(ckpt, l, h, keep_channels, stats):
    p = f"layers.{l}."
    w_gate, w_up, w_down = (ckpt[p + k] for k in MLP_KEYS)
    if keep_channels is not None and not keep_channels.all():
        idx = np.flatnonzero(keep_channels)
        w_gate, w_up, w_down = w_gate[:, idx], w_up[:, idx], w_down[idx]
    a = nx.silu(nx.matmul(h, w_gate)) * nx.matmul(h, w_up)
    if stats is not None:
        stats.add(f"{p}mlp_hidden", a)
    return nx.matmul(a, w_down)


class ActivationStats:
    """Accumulates per-feature sums of squares for activation-aware metrics."""

    def __init__(self):
        self.sumsq: dict[str, np.ndarray] = {}
        self.count: dict[str, int] = {}

    def add(self, key: str, x: np.ndarray) -> None:
        flat = x.reshape(-1, x.shape[-1]).astype(np.float64)
        self.sumsq[key] = self.sumsq.get(key, 0.0) + np.square(flat).sum(axis=0)
        self.count[key] = self.count.get(key, 0) + flat.shape[0]

    def rms(self, key: str) -> np.ndarray:
        return np.sqrt(self.sumsq[key] / self.count[key])


def _check_tokens(arch: ArchConfig, tokens) -> np.ndarray:
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None]
    if tokens.ndim != 2 or tokens.shape[1] < 1:
        raise DataError(f"tokens must be [batch, seq], got shape {tokens.shape}")
    if tokens.shape[1] > arch.max_seq_len:
        raise DataError(f"sequence length {tokens.shape[1]} exceeds max_seq_len {arch.max_seq_len}")
    if tokens.min() < 0 or tokens.max() >= arch.vocab_size:
        raise DataError(f"token ids must lie in [0, {arch.vocab_size})")
    return tokens.astype(np.int64)


def _resolve_mask(ckpt, mask, gmap) -> StructuredMask | None:
    if mask is None:
        return None
    if isinstance(mask, StructuredMask):
        return mask
    if gmap is None:
        raise ConfigError("a granularity map is required to apply a flat mask")
    if gmap.arch != ckpt.arch:
        raise ConfigError("granularity map was built for a different architecture")
    return gmap.decode(mask)


def hidden_states(ckpt: ModelCheckpoint, tokens, mask=None, gmap=None, stats=None) -> np.ndarray:
    """Final-normed residual stream ``[B, T, d_model]``."""
    arch = ckpt.arch
    tokens = _check_tokens(arch, tokens)
    keep = _resolve_mask(ckpt, mask, gmap)
    T = tokens.shape[1]
    cos, sin = rope_tables(arch, np.arange(T))
    causal = np.triu(np.full((T, T), -np.inf, dtype=nx.DTYPE), k=1)
    x = nx.gather_rows(ckpt["tok_embed"], tokens)
    for l in range(arch.n_layers):
        if keep is not None and not keep.layers[l]:
            continue
        p = f"layers.{l}."
        kh = None if keep is None else keep.heads[l]
        kc = None if keep is None else keep.channels[l]
        if arch.heads_in(l) and (kh is None or kh.any()):
            x = x + _attention(ckpt, l, nx.rmsnorm(x, ckpt[p + "attn_norm"], arch.rms_eps), kh, cos, sin, causal, stats)
        if arch.ff_in(l) and (kc is None or kc.any()):
            x = x + _mlp(ckpt, l, nx.rmsnorm(x, ckpt[p + "mlp_norm"], arch.rms_eps), kc, stats)
    return nx.rmsnorm(x, ckpt["final_norm"], arch.rms_eps)


def forward_logits(ckpt: ModelCheckpoint, tokens, mask=None, gmap=None) -> np.ndarray:
    """Pre-softmax logits ``[B, T, vocab]`` for every position of ``tokens``."""
    return nx.matmul(hidden_states(ckpt, tokens, mask, gmap), ckpt["lm_head"])


def token_nll(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-position negative log-likelihood in float64."""
    logp = nx.log_softmax_rows(logits)
    return -np.take_along_axis(logp, np.asarray(targets)[..., None], axis=-1)[..., 0]


def forward_nll(ckpt: ModelCheckpoint, batch: CalibrationBatch, mask=None, gmap=None) -> np.ndarray:
    return token_nll(forward_logits(ckpt, batch.inputs, mask, gmap), batch.targets)


def forward_loss(ckpt: ModelCheckpoint, batch: CalibrationBatch, mask=None, gmap=None) -> float:
    """Mean next-token cross-entropy over every predicted position."""
    return float(forward_nll(ckpt, batch, mask, gmap).mean())


def masked_loss_evaluator(ckpt: ModelCheckpoint, gmap: GranularityMap):
    """Wrap the network as a ``(mask, batch) -> loss`` oracle for the optimizer."""

    def evaluate(mask, batch):
        return forward_loss(ckpt, batch, mask, gmap)

    return evaluate


def _decode_step(ckpt, tok, pos, cache):
    arch = ckpt.arch
    dh = arch.d_head
    cos, sin = rope_tables(arch, np.array([pos]))
    x = nx.gather_rows(ckpt["tok_embed"], tok[:, None])
    B = x.shape[0]
    for l in range(arch.n_layers):
        p = f"layers.{l}."
        nh = arch.heads_in(l)
        if nh:
            h = nx.rmsnorm(x, ckpt[p + "attn_norm"], arch.rms_eps)

            def split(w):
                return nx.matmul(h, w).reshape(B, 1, nh, dh).transpose(0, 2, 1, 3)

            q = apply_rope(split(ckpt[p + "wq"]), cos, sin)
            kc, vc = cache[l]
            kc[:, :, pos : pos + 1] = apply_rope(split(ckpt[p + "wk"]), cos, sin)
            vc[:, :, pos : pos + 1] = split(ckpt[p + "wv"])
            scores = nx.matmul(q, kc[:, :, : pos + 1].transpose(0, 1, 3, 2)) * nx.DTYPE(1.0 / math.sqrt(dh))
            ctx = nx.matmul(nx.softmax_rows(scores), vc[:, :, : pos + 1]).transpose(0, 2, 1, 3).reshape(B, 1, nh * dh)
            x = x + nx.matmul(ctx, ckpt[p + "wo"])
        if arch.ff_in(l):
            x = x + _mlp(ckpt, l, nx.rmsnorm(x, ckpt[p + "mlp_norm"], arch.rms_eps), None, None)
    return nx.matmul(nx.rmsnorm(x, ckpt["final_norm"], arch.rms_eps), ckpt["lm_head"])[:, 0]


def teacher_sample(
    ckpt: ModelCheckpoint, seed: int, n_segments: int, seq_len: int, temperature: float = 1.0, chunk: int = 256
) -> SegmentStore:
    """Sample segments autoregressively from the dense model.

    The first token of each segment is uniform over the vocabulary. As
    ``temperature`` approaches 0 sampling approaches greedy decoding.
    """
    arch = ckpt.arch
    if temperature <= 0:
        raise ConfigError("temperature must be > 0")
    if seq_len - 1 > arch.max_seq_len or seq_len < 2:
        raise ConfigError(f"seq_len must be in [2, {arch.max_seq_len + 1}]")
    rng = np.random.default_rng(seed)
    out = np.empty((n_segments, seq_len), dtype=np.uint32)
    for start in range(0, n_segments, chunk):
        B = min(chunk, n_segments - start)
        shapes = [(B, arch.heads_in(l), seq_len, arch.d_head) for l in range(arch.n_layers)]
        cache = [(np.zeros(s, nx.DTYPE), np.zeros(s, nx.DTYPE)) for s in shapes]
        tok = rng.integers(0, arch.vocab_size, size=B)
        out[start : start + B, 0] = tok
        for pos in range(seq_len - 1):
            logits = _decode_step(ckpt, tok, pos, cache).astype(np.float64) / temperature
            probs = np.exp(logits - logits.max(axis=-1, keepdims=True))
            cdf = np.cumsum(probs, axis=-1)
            u = rng.random(B)[:, None] * cdf[:, -1:]
            tok = np.minimum((cdf <= u).sum(axis=-1), arch.vocab_size - 1)
            out[start : start + B, pos + 1] = tok
    return SegmentStore(arch.vocab_size, out)


def toy_checkpoint(
    arch: ArchConfig,
    seed: int = 0,
    unit_spread: float = 1.0,
    layer_scales=None,
    logit_scale: float = 4.0,
) -> ModelCheckpoint:
    """Random weights with heterogeneous unit importance.

    Each head's ``wo`` rows and each channel's ``w_down`` row get a log-normal
    scale with log-std ``unit_spread``; ``layer_scales`` multiplies every
    block output of a layer. This gives pruning something to discover.
    """
    rng = np.random.default_rng(seed)
    d, f, dh = arch.d_model, arch.d_ff, arch.d_head
    if layer_scales is None:
        layer_scales = np.ones(arch.n_layers)
    layer_scales = np.asarray(layer_scales, dtype=np.float64)

    def normal(*shape, std=1.0):
        return (rng.standard_normal(shape) * std).astype(nx.DTYPE)

    t = {"tok_embed": normal(arch.vocab_size, d)}
    for l in range(arch.n_layers):
        p = f"layers.{l}."
        t[p + "attn_norm"] = np.ones(d, nx.DTYPE)
        t[p + "mlp_norm"] = np.ones(d, nx.DTYPE)
        t[p + "wq"] = normal(d, d, std=1 / math.sqrt(d))
        t[p + "wk"] = normal(d, d, std=1 / math.sqrt(d))
        t[p + "wv"] = normal(d, d, std=1 / math.sqrt(d))
        head_scale = np.repeat(rng.lognormal(0.0, unit_spread, arch.n_heads), dh)
        t[p + "wo"] = normal(d, d, std=1 / math.sqrt(d)) * (head_scale * layer_scales[l])[:, None].astype(nx.DTYPE)
        t[p + "w_gate"] = normal(d, f, std=1 / math.sqrt(d))
        t[p + "w_up"] = normal(d, f, std=1 / math.sqrt(d))
        chan_scale = rng.lognormal(0.0, unit_spread, f)
        t[p + "w_down"] = normal(f, d, std=1 / math.sqrt(f)) * (chan_scale * layer_scales[l])[:, None].astype(nx.DTYPE)
    t["final_norm"] = np.ones(d, nx.DTYPE)
    t["lm_head"] = normal(d, arch.vocab_size, std=logit_scale / math.sqrt(d))
    return ModelCheckpoint(arch, t)

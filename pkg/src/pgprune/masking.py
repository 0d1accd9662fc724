"""Prunable units, Bernoulli mask sampling and the score-function gradient.

A mask entry of 1 keeps its unit, 0 prunes it. Retention probabilities ``s``
live in [0, 1]; probability computations clamp them into ``[EPS, 1 - EPS]``
while sampling uses the raw values so that 0 and 1 stay deterministic.

Random streams use numpy's PCG64 seeded through ``SeedSequence`` with an
integer key tuple, e.g. ``(seed, step, sample_index)``. This makes every draw
reproducible from its key regardless of call order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .arch import ArchConfig
from .errors import ConfigError, FormatError

EPS = 1e-4
KINDS = ("head", "mlp_channel", "layer")


def rng_for(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(k) for k in key])))


class Unit(NamedTuple):
    kind: str
    layer: int
    index: int
    param_count: int


@dataclass
class StructuredMask:
    """Per-layer boolean keep arrays decoded from a flat mask."""

    heads: list[np.ndarray]
    channels: list[np.ndarray]
    layers: np.ndarray


@dataclass
class GranularityMap:
    """Ordered bijection between mask positions and model structures."""

    arch: ArchConfig
    kinds: tuple[str, ...]
    units: list[Unit] = field(repr=False)

    def __post_init__(self):
        self.kind_codes = np.array([KINDS.index(u.kind) for u in self.units], dtype=np.int8)
        self.layer_ids = np.array([u.layer for u in self.units], dtype=np.int64)
        self.index_ids = np.array([u.index for u in self.units], dtype=np.int64)
        self.param_counts = np.array([u.param_count for u in self.units], dtype=np.int64)
        if len({u[:3] for u in self.units}) != len(self.units):
            raise ConfigError("duplicate unit descriptors")

    @classmethod
    def from_arch(cls, arch: ArchConfig, kinds=("head", "mlp_channel")) -> "GranularityMap":
        requested = set(kinds)
        kinds = tuple(k for k in KINDS if k in requested)
        if not kinds or requested - set(KINDS):
            raise ConfigError(f"granularity kinds must be a non-empty subset of {KINDS}")
        if "layer" in kinds and len(kinds) > 1:
            raise ConfigError("layer granularity cannot be combined with head or channel units")
        d, dh = arch.d_model, arch.d_head
        units = []
        if "head" in kinds:
            units += [Unit("head", l, h, 4 * d * dh) for l in range(arch.n_layers) for h in range(arch.heads_in(l))]
        if "mlp_channel" in kinds:
            units += [Unit("mlp_channel", l, c, 3 * d) for l in range(arch.n_layers) for c in range(arch.ff_in(l))]
        if "layer" in kinds:
            units += [
                Unit("layer", l, 0, 2 * d + 4 * d * dh * arch.heads_in(l) + 3 * d * arch.ff_in(l))
                for l in range(arch.n_layers)
            ]
        if not units:
            raise ConfigError("granularity map has no units")
        return cls(arch, kinds, units)

    @property
    def unit_count(self) -> int:
        return len(self.units)

    def __len__(self) -> int:
        return len(self.units)

    def check(self, mask) -> np.ndarray:
        m = np.asarray(mask)
        if m.shape != (self.unit_count,):
            raise ConfigError(f"mask has shape {m.shape}, map has {self.unit_count} units")
        return m

    def decode(self, mask) -> StructuredMask:
        m = self.check(mask).astype(bool)
        arch = self.arch
        heads = [np.ones(arch.heads_in(l), dtype=bool) for l in range(arch.n_layers)]
        channels = [np.ones(arch.ff_in(l), dtype=bool) for l in range(arch.n_layers)]
        layers = np.ones(arch.n_layers, dtype=bool)
        for code, target in ((0, heads), (1, channels)):
            sel = self.kind_codes == code
            for l, i, keep in zip(self.layer_ids[sel], self.index_ids[sel], m[sel]):
                target[l][i] = keep
        sel = self.kind_codes == 2
        layers[self.layer_ids[sel]] = m[sel]
        return StructuredMask(heads, channels, layers)

    def groups(self) -> dict[tuple[int, str], np.ndarray]:
        """Unit indices grouped by (layer, kind), in unit order.

        Whole-layer units share one group keyed ``(-1, "layer")``; a group per
        layer would hold a single unit and never prune it.
        """
        out: dict[tuple[int, str], list[int]] = {}
        for i, u in enumerate(self.units):
            out.setdefault((-1 if u.kind == "layer" else u.layer, u.kind), []).append(i)
        return {k: np.array(v) for k, v in out.items()}

    def unprunable_params(self) -> int:
        """Parameters no unit controls: embeddings, head, norms not covered by a layer unit."""
        arch = self.arch
        d = arch.d_model
        total = 2 * arch.vocab_size * d + d
        if "layer" not in self.kinds:
            total += 2 * d * arch.n_layers
            dh = arch.d_head
            if "head" not in self.kinds:
                total += sum(4 * d * dh * arch.heads_in(l) for l in range(arch.n_layers))
            if "mlp_channel" not in self.kinds:
                total += sum(3 * d * arch.ff_in(l) for l in range(arch.n_layers))
        return total


def check_scores(s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 1 or not np.all(np.isfinite(s)) or s.min(initial=0.0) < 0 or s.max(initial=0.0) > 1:
        raise ConfigError("scores must be a finite vector in [0, 1]")
    return s


def sample_mask(s, rng) -> np.ndarray:
    """Independent Bernoulli draws, ``m_i = 1`` with probability ``s_i``.

    ``rng`` is a Generator or an integer seed / seed tuple.
    """
    if not isinstance(rng, np.random.Generator):
        rng = rng_for(*np.atleast_1d(rng))
    s = np.asarray(s, dtype=np.float64)
    return (rng.random(s.shape) < s).astype(np.int8)


def _clamp(s):
    return np.clip(np.asarray(s, dtype=np.float64), EPS, 1.0 - EPS)


def log_prob(s, m) -> float:
    s = _clamp(s)
    m = np.asarray(m, dtype=np.float64)
    return float(np.sum(m * np.log(s) + (1.0 - m) * np.log1p(-s)))


def grad_log_prob(s, m) -> np.ndarray:
    """Score function ``(m - s) / (s (1 - s))``; broadcasts over leading mask axes."""
    s = _clamp(s)
    return (np.asarray(m, dtype=np.float64) - s) / (s * (1.0 - s))


# Score files: ``<u64 count><count x f32>``, little-endian, plus a JSON sidecar.


def write_scores(path, s, gmap: GranularityMap | None = None, source: str = "") -> None:
    path = Path(path)
    values = np.asarray(s, dtype="<f4")
    path.write_bytes(struct.pack("<Q", values.size) + values.tobytes())
    meta = {"unit_count": int(values.size), "source": source}
    if gmap is not None:
        meta["granularity"] = list(gmap.kinds)
        meta["arch_hash"] = gmap.arch.digest()
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_scores(path, gmap: GranularityMap | None = None) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 8:
        raise FormatError(f"{path}: truncated score file")
    (count,) = struct.unpack("<Q", blob[:8])
    if len(blob) != 8 + 4 * count:
        raise FormatError(f"{path}: expected {count} float32 values")
    values = np.frombuffer(blob, dtype="<f4", offset=8).astype(np.float64)
    sidecar = path.with_suffix(".json")
    if gmap is not None:
        if count != gmap.unit_count:
            raise FormatError(f"{path}: {count} scores for {gmap.unit_count} units")
        if sidecar.exists():
            meta = json.loads(sidecar.read_text())
            if "arch_hash" in meta and meta["arch_hash"] != gmap.arch.digest():
                raise FormatError(f"{path}: scores were written for a different architecture")
            if "granularity" in meta and tuple(meta["granularity"]) != gmap.kinds:
                raise FormatError(f"{path}: scores use granularity {meta['granularity']}")
    return values

"""Architecture descriptor shared by the model, masking, and I/O code."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class ArchConfig:
    """Shape of a decoder-only transformer.

    ``head_counts`` and ``ff_dims`` are only set on compacted models, where
    layers can retain different numbers of heads and MLP channels. A count of
    zero means the block is absent and acts as the identity on the residual.
    """

    vocab_size: int
    d_model: int
    n_layers: int
    n_heads: int
    d_ff: int
    max_seq_len: int
    rms_eps: float = 1e-5
    rope_base: float = 10000.0
    head_counts: tuple[int, ...] | None = None
    ff_dims: tuple[int, ...] | None = None

    def __post_init__(self):
        for name in ("d_model", "n_layers", "n_heads", "d_ff", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2")
        if self.d_model % self.n_heads:
            raise ConfigError("d_model must be divisible by n_heads")
        if self.d_head % 2:
            raise ConfigError("rotary embeddings need an even head dimension")
        if self.head_counts is not None:
            object.__setattr__(self, "head_counts", tuple(int(h) for h in self.head_counts))
            if len(self.head_counts) != self.n_layers or not all(0 <= h <= self.n_heads for h in self.head_counts):
                raise ConfigError("head_counts must list 0..n_heads heads for every layer")
        if self.ff_dims is not None:
            object.__setattr__(self, "ff_dims", tuple(int(f) for f in self.ff_dims))
            if len(self.ff_dims) != self.n_layers or not all(0 <= f <= self.d_ff for f in self.ff_dims):
                raise ConfigError("ff_dims must list 0..d_ff channels for every layer")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def heads_in(self, layer: int) -> int:
        return self.n_heads if self.head_counts is None else self.head_counts[layer]

    def ff_in(self, layer: int) -> int:
        return self.d_ff if self.ff_dims is None else self.ff_dims[layer]

    @property
    def is_dense(self) -> bool:
        return all(self.heads_in(l) == self.n_heads and self.ff_in(l) == self.d_ff for l in range(self.n_layers))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key in ("head_counts", "ff_dims"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown architecture fields: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        """Stable hash used to tie score files to an architecture."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

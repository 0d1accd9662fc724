"""Calibration segments: storage, batching, the segments file format."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import DataError, FormatError

SEG_MAGIC = b"MGSEG1"
# magic, 2 pad bytes, then vocab_size, seq_len, count as little-endian u32
_SEG_HEADER = struct.Struct("<6s2xIII")


@dataclass(frozen=True)
class CalibrationBatch:
    """Token segments ``[B, seq_len]``; targets are the ids shifted by one."""

    tokens: np.ndarray

    @property
    def inputs(self) -> np.ndarray:
        return self.tokens[:, :-1]

    @property
    def targets(self) -> np.ndarray:
        return self.tokens[:, 1:]

    def __len__(self) -> int:
        return self.tokens.shape[0]


@dataclass(frozen=True)
class SegmentStore:
    vocab_size: int
    ids: np.ndarray  # [count, seq_len] uint32

    def __post_init__(self):
        ids = np.asarray(self.ids)
        if ids.ndim != 2 or ids.shape[0] < 1 or ids.shape[1] < 2:
            raise DataError("segments must form a [count >= 1, seq_len >= 2] matrix")
        if ids.max() >= self.vocab_size:
            raise DataError(f"token id {int(ids.max())} outside vocabulary of {self.vocab_size}")
        object.__setattr__(self, "ids", ids.astype(np.uint32))

    @property
    def count(self) -> int:
        return self.ids.shape[0]

    @property
    def seq_len(self) -> int:
        return self.ids.shape[1]

    def __len__(self) -> int:
        return self.count

    def subset(self, start: int, stop: int) -> "SegmentStore":
        return SegmentStore(self.vocab_size, self.ids[start:stop])

    def as_batch(self) -> CalibrationBatch:
        return CalibrationBatch(self.ids.astype(np.int64))

    def validate_for(self, arch) -> None:
        if self.vocab_size > arch.vocab_size:
            raise DataError(f"corpus vocabulary {self.vocab_size} exceeds model vocabulary {arch.vocab_size}")
        if self.seq_len - 1 > arch.max_seq_len:
            raise DataError(f"segments of length {self.seq_len} exceed max_seq_len {arch.max_seq_len}")


def write_segments(path, store: SegmentStore) -> None:
    header = _SEG_HEADER.pack(SEG_MAGIC, store.vocab_size, store.seq_len, store.count)
    Path(path).write_bytes(header + store.ids.astype("<u4").tobytes())


def load_segments(path, arch=None) -> SegmentStore:
    blob = Path(path).read_bytes()
    if len(blob) < _SEG_HEADER.size or blob[:6] != SEG_MAGIC:
        raise FormatError(f"{path}: not a segments file")
    _, vocab, seq_len, count = _SEG_HEADER.unpack_from(blob)
    payload = len(blob) - _SEG_HEADER.size
    if payload != 4 * count * seq_len:
        raise FormatError(f"{path}: payload holds {payload // 4} ids, header says {count}x{seq_len}")
    ids = np.frombuffer(blob, dtype="<u4", offset=_SEG_HEADER.size).reshape(count, seq_len)
    store = SegmentStore(vocab, ids)
    if arch is not None:
        store.validate_for(arch)
    return store


def batches(store: SegmentStore, batch_size: int, seed: int = 0, shuffle: bool = True) -> Iterator[CalibrationBatch]:
    """One epoch over the store; the last batch may be short."""
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    order = np.arange(store.count)
    if shuffle:
        order = np.random.default_rng(seed).permutation(store.count)
    for start in range(0, store.count, batch_size):
        yield CalibrationBatch(store.ids[order[start : start + batch_size]].astype(np.int64))


def epochs(store: SegmentStore, batch_size: int, seed: int = 0, shuffle: bool = True) -> Iterator[CalibrationBatch]:
    """Endless batch stream; epoch ``e`` is shuffled with ``seed + e``."""
    e = 0
    while True:
        yield from batches(store, batch_size, seed + e, shuffle)
        e += 1


def synth_uniform(vocab_size: int, seq_len: int, count: int, seed: int = 0) -> SegmentStore:
    rng = np.random.default_rng(seed)
    return SegmentStore(vocab_size, rng.integers(0, vocab_size, size=(count, seq_len), dtype=np.uint32))

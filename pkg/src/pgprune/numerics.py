"""Dense float32 kernels used by the masked forward pass.

Arrays are plain row-major ``numpy.ndarray`` objects of dtype float32. Every
function returns a fresh array and never mutates its inputs.
"""

import numpy as np

from .errors import DimensionError, NumericError

DTYPE = np.float32


def as_tensor(x) -> np.ndarray:
    """Copy ``x`` into a contiguous float32 array with nonzero extents."""
    a = np.ascontiguousarray(x, dtype=DTYPE)
    if a.ndim == 0 or 0 in a.shape:
        raise DimensionError(f"tensor extents must be positive, got shape {a.shape}")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product over the last two axes, float32 accumulation."""
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError(f"inner extents differ: {a.shape} @ {b.shape}")
    # row-major operands always, so BLAS picks the same kernel whether a
    # weight was sliced in place or stored compacted
    a, b = np.ascontiguousarray(a), np.ascontiguousarray(b)
    if b.ndim == 2 and a.ndim > 2:
        # one GEMM over the flattened leading axes instead of a batched loop
        out = np.matmul(a.reshape(-1, a.shape[-1]), b)
        return out.reshape(*a.shape[:-1], b.shape[-1])
    return np.matmul(a, b)


def softmax_rows(a: np.ndarray) -> np.ndarray:
    """Softmax along the last axis with per-row max subtraction."""
    if np.isnan(a).any():
        raise NumericError("softmax input contains NaN")
    e = np.subtract(a, a.max(axis=-1, keepdims=True), dtype=DTYPE)
    np.exp(e, out=e)
    e /= e.sum(axis=-1, keepdims=True)
    return e


def log_softmax_rows(a: np.ndarray) -> np.ndarray:
    """Log-softmax along the last axis; the normalizer is summed in float64."""
    if np.isnan(a).any():
        raise NumericError("log-softmax input contains NaN")
    shifted = np.subtract(a, a.max(axis=-1, keepdims=True), dtype=np.float64)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def rmsnorm(x: np.ndarray, gain: np.ndarray, eps: float) -> np.ndarray:
    if x.shape[-1] != gain.shape[-1]:
        raise DimensionError(f"rmsnorm gain has {gain.shape[-1]} entries, input has {x.shape[-1]}")
    ms = np.mean(np.square(x, dtype=DTYPE), axis=-1, keepdims=True, dtype=DTYPE)
    return (x / np.sqrt(ms + DTYPE(eps)) * gain).astype(DTYPE, copy=False)


def silu(x: np.ndarray) -> np.ndarray:
    d = np.negative(x, dtype=DTYPE)
    np.exp(d, out=d)
    d += DTYPE(1.0)
    return np.divide(x, d, out=d)


def gather_rows(table: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Embedding lookup: ``table[ids]`` with bounds checking."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError(f"index out of range for table with {table.shape[0]} rows")
    return table[ids]

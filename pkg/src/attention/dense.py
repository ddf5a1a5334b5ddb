"""
Dense and masked dot-product attention over the last two axes.

Inputs are (..., N, d); leading axes (batch, heads) broadcast. This is the
N x N reference path: the blockwise kernels are checked against it.
"""
from dataclasses import dataclass

import numpy as np

from src.costmodel.tracker import TRACKER, AllocationTracker
from src.errors import ArgumentError, DimensionError
from src.masking.block_mask import Mask
from src.numerics.tensor import softmax_rows


@dataclass
class DenseCache:
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    probs: np.ndarray
    scale: float
    keep: np.ndarray | None = None
    dropout: float = 0.0


def _check_qkv(q, k, v):
    if q.ndim < 2 or q.shape != k.shape or k.shape != v.shape or q.shape[-1] < 1:
        raise DimensionError(f"Q/K/V shapes must agree: {q.shape}, {k.shape}, {v.shape}")


def _allowed(mask, key_valid, n: int):
    allowed = None
    if mask is not None:
        bits = mask.bits if isinstance(mask, Mask) else np.asarray(mask, dtype=bool)
        if bits.shape != (n, n):
            raise DimensionError(f"mask {bits.shape} does not match sequence length {n}")
        allowed = bits
    if key_valid is not None:
        kv = np.asarray(key_valid, dtype=bool)[..., None, :]
        allowed = kv if allowed is None else allowed & kv
    return allowed


def _dropout_keep(shape, rate: float, rng: np.random.Generator | None):
    if rate <= 0.0:
        return None
    if rng is None:
        raise ArgumentError("attention dropout needs an explicit random generator")
    return rng.random(shape) >= rate


def masked_attention_forward(q, k, v, mask=None, key_valid=None, dropout: float = 0.0,
                             rng: np.random.Generator | None = None,
                             tracker: AllocationTracker = TRACKER):
    """
    softmax((QK^T / sqrt(d)) (.) M) V, where (.) sends masked scores to -inf.

    Returns (output, cache). The probability buffer stays registered with the
    tracker until the cache is released by backward or release_dense_cache.
    """
    q, k, v = np.asarray(q), np.asarray(k), np.asarray(v)
    _check_qkv(q, k, v)
    scale = 1.0 / np.sqrt(q.shape[-1])

    scores = q @ np.swapaxes(k, -1, -2)
    tracker.allocate(scores.nbytes, "scores")
    scores *= scale
    allowed = _allowed(mask, key_valid, q.shape[-2])
    if allowed is not None:
        np.copyto(scores, -np.inf, where=~np.broadcast_to(allowed, scores.shape))
    probs = softmax_rows(scores, out=scores)

    keep = _dropout_keep(probs.shape, dropout, rng)
    if keep is not None:
        tracker.allocate(keep.nbytes, "dropout")
        out = (probs * keep / (1.0 - dropout)) @ v
    else:
        out = probs @ v
    return out, DenseCache(q, k, v, probs, scale, keep, dropout)


def release_dense_cache(cache: DenseCache, tracker: AllocationTracker = TRACKER) -> None:
    tracker.release(cache.probs.nbytes, "scores")
    if cache.keep is not None:
        tracker.release(cache.keep.nbytes, "dropout")


def masked_attention_backward_from_cache(cache: DenseCache, dout, tracker: AllocationTracker = TRACKER):
    """Vector-Jacobian product; returns (dQ, dK, dV) and releases the cache."""
    p = cache.probs
    if cache.keep is not None:
        factor = cache.keep / (1.0 - cache.dropout)
        dv = np.swapaxes(p * factor, -1, -2) @ dout
        dp = (dout @ np.swapaxes(cache.v, -1, -2)) * factor
    else:
        dv = np.swapaxes(p, -1, -2) @ dout
        dp = dout @ np.swapaxes(cache.v, -1, -2)
    ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True))
    ds *= cache.scale
    dq = ds @ cache.k
    dk = np.swapaxes(ds, -1, -2) @ cache.q
    release_dense_cache(cache, tracker)
    return dq, dk, dv


def attention(q, k, v) -> np.ndarray:
    """softmax(QK^T / sqrt(d)) V."""
    return masked_attention(q, k, v, None)


def masked_attention(q, k, v, mask) -> np.ndarray:
    out, cache = masked_attention_forward(q, k, v, mask)
    release_dense_cache(cache)
    return out


def masked_attention_backward(q, k, v, mask, dout):
    _, cache = masked_attention_forward(q, k, v, mask)
    return masked_attention_backward_from_cache(cache, np.asarray(dout))

"""
Blockwise attention.

The sequence is cut into n blocks of N/n rows; query block i only attends to
key/value block pi(i). Only the n score blocks of (N/n)^2 entries are ever
materialized (N^2/n floats per head), forward and backward alike.
"""
from dataclasses import dataclass

import numpy as np

from src.attention.dense import _check_qkv, _dropout_keep
from src.costmodel.tracker import TRACKER, AllocationTracker
from src.errors import PaddingRequiredError
from src.masking.permutation import Permutation
from src.numerics.tensor import softmax_rows


@dataclass
class BlockwiseCache:
    qb: np.ndarray
    kb: np.ndarray   # key blocks already gathered by pi
    vb: np.ndarray   # value blocks already gathered by pi
    perm: Permutation
    probs: np.ndarray
    scale: float
    keep: np.ndarray | None = None
    dropout: float = 0.0


def _split(x: np.ndarray, n: int) -> np.ndarray:
    """(..., N, d) -> (..., n, N/n, d)"""
    N = x.shape[-2]
    return x.reshape(x.shape[:-2] + (n, N // n, x.shape[-1]))


def _merge(xb: np.ndarray) -> np.ndarray:
    return xb.reshape(xb.shape[:-3] + (xb.shape[-3] * xb.shape[-2], xb.shape[-1]))


def _check_blocks(q: np.ndarray, n: int, perm: Permutation) -> None:
    N = q.shape[-2]
    if n < 1 or N % n:
        raise PaddingRequiredError(f"n={n} does not divide N={N}; pad the sequence first")
    if perm.n != n:
        raise PaddingRequiredError(f"permutation {perm} is over {perm.n} blocks, expected {n}")


def blockwise_attention_forward(q, k, v, n: int, perm: Permutation, key_valid=None,
                                dropout: float = 0.0, rng: np.random.Generator | None = None,
                                tracker: AllocationTracker = TRACKER):
    """
    Row block i of the output is softmax(Q_i K_pi(i)^T / sqrt(d)) V_pi(i).

    key_valid (broadcastable to q.shape[:-1]) marks non-pad keys. A query
    block whose key block pi(i) holds no valid key gets a zero context.
    Returns (output, cache); the probability blocks stay tracked until the
    cache is released.
    """
    q, k, v = np.asarray(q), np.asarray(k), np.asarray(v)
    _check_qkv(q, k, v)
    _check_blocks(q, n, perm)
    idx = perm.indices()
    scale = 1.0 / np.sqrt(q.shape[-1])

    qb = _split(q, n)
    kb = _split(k, n)[..., idx, :, :]
    vb = _split(v, n)[..., idx, :, :]

    scores = qb @ np.swapaxes(kb, -1, -2)
    tracker.allocate(scores.nbytes, "scores")
    scores *= scale

    empty = None
    if key_valid is not None:
        kv = np.asarray(key_valid, dtype=bool)
        kv = kv.reshape(kv.shape[:-1] + (n, kv.shape[-1] // n))[..., idx, :]
        empty = ~kv.any(axis=-1)
        kv = kv | empty[..., None]
        np.copyto(scores, -np.inf, where=~np.broadcast_to(kv[..., None, :], scores.shape))
    probs = softmax_rows(scores, out=scores)
    if empty is not None and empty.any():
        probs *= (~empty)[..., None, None]

    keep = _dropout_keep(probs.shape, dropout, rng)
    if keep is not None:
        tracker.allocate(keep.nbytes, "dropout")
        outb = (probs * keep / (1.0 - dropout)) @ vb
    else:
        outb = probs @ vb
    return _merge(outb), BlockwiseCache(qb, kb, vb, perm, probs, scale, keep, dropout)


def release_blockwise_cache(cache: BlockwiseCache, tracker: AllocationTracker = TRACKER) -> None:
    tracker.release(cache.probs.nbytes, "scores")
    if cache.keep is not None:
        tracker.release(cache.keep.nbytes, "dropout")


def blockwise_attention_backward_from_cache(cache: BlockwiseCache, dout,
                                            tracker: AllocationTracker = TRACKER):
    """Block-local VJP. Returns (dQ, dK, dV) and releases the cache."""
    n = cache.perm.n
    idx = cache.perm.indices()
    dob = _split(np.asarray(dout), n)
    p = cache.probs

    if cache.keep is not None:
        factor = cache.keep / (1.0 - cache.dropout)
        dvb = np.swapaxes(p * factor, -1, -2) @ dob
        dp = (dob @ np.swapaxes(cache.vb, -1, -2)) * factor
    else:
        dvb = np.swapaxes(p, -1, -2) @ dob
        dp = dob @ np.swapaxes(cache.vb, -1, -2)
    ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True))
    ds *= cache.scale

    dqb = ds @ cache.kb
    dkb_gathered = np.swapaxes(ds, -1, -2) @ cache.qb

    # gathered slot i holds block pi(i); pi is a bijection, so scatter is a plain assignment
    dkb = np.empty_like(dkb_gathered)
    dvb_out = np.empty_like(dvb)
    dkb[..., idx, :, :] = dkb_gathered
    dvb_out[..., idx, :, :] = dvb

    release_blockwise_cache(cache, tracker)
    return _merge(dqb), _merge(dkb), _merge(dvb_out)


def blockwise_attention(q, k, v, n: int, perm: Permutation) -> np.ndarray:
    out, cache = blockwise_attention_forward(q, k, v, n, perm)
    release_blockwise_cache(cache)
    return out


def blockwise_attention_backward(q, k, v, n: int, perm: Permutation, upstream_grad):
    _, cache = blockwise_attention_forward(q, k, v, n, perm)
    return blockwise_attention_backward_from_cache(cache, upstream_grad)

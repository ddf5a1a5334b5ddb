"""
Blockwise multi-head attention: every head runs blockwise attention with its
own permutation; heads sharing a permutation run as one batched call.
"""
import numpy as np

from src.attention.blockwise import (
    BlockwiseCache,
    blockwise_attention_backward_from_cache,
    blockwise_attention_forward,
    release_blockwise_cache,
)
from src.attention.config import MultiHeadParams
from src.attention.dense import (
    masked_attention_backward_from_cache,
    masked_attention_forward,
    release_dense_cache,
)
from src.costmodel.tracker import TRACKER, AllocationTracker
from src.errors import ArgumentError
from src.masking.permutation import HeadAssignment


def heads_forward(q, k, v, assignment: HeadAssignment, key_valid=None, dense: bool = False,
                  dropout: float = 0.0, rng: np.random.Generator | None = None,
                  tracker: AllocationTracker = TRACKER):
    """
    q, k, v: (..., A, N, d). key_valid: (..., N) or None.

    With dense=True every head attends over the full sequence (the reference
    model); otherwise head slots follow the assignment's group order.
    Returns (context (..., A, N, d), caches).
    """
    if q.shape[-3] != assignment.total_heads:
        raise ArgumentError(
            f"{q.shape[-3]} heads of parameters but assignment {assignment} covers {assignment.total_heads}"
        )
    kv = None if key_valid is None else np.asarray(key_valid, dtype=bool)[..., None, :]
    ctx = np.empty_like(q)
    caches = []

    if dense:
        out, cache = masked_attention_forward(q, k, v, None, kv, dropout, rng, tracker)
        ctx[...] = out
        caches.append((slice(None), cache))
        return ctx, caches

    for perm, start, count in assignment.groups():
        sl = slice(start, start + count)
        out, cache = blockwise_attention_forward(
            q[..., sl, :, :], k[..., sl, :, :], v[..., sl, :, :],
            perm.n, perm, kv, dropout, rng, tracker,
        )
        ctx[..., sl, :, :] = out
        caches.append((sl, cache))
    return ctx, caches


def heads_backward(caches, dctx, tracker: AllocationTracker = TRACKER):
    dq = np.zeros_like(dctx)
    dk = np.zeros_like(dctx)
    dv = np.zeros_like(dctx)
    for sl, cache in caches:
        if isinstance(cache, BlockwiseCache):
            gq, gk, gv = blockwise_attention_backward_from_cache(cache, dctx[..., sl, :, :], tracker)
        else:
            gq, gk, gv = masked_attention_backward_from_cache(cache, dctx[..., sl, :, :], tracker)
        dq[..., sl, :, :] = gq
        dk[..., sl, :, :] = gk
        dv[..., sl, :, :] = gv
    return dq, dk, dv


def release_heads(caches, tracker: AllocationTracker = TRACKER) -> None:
    for _, cache in caches:
        if isinstance(cache, BlockwiseCache):
            release_blockwise_cache(cache, tracker)
        else:
            release_dense_cache(cache, tracker)


def split_heads(x: np.ndarray, num_heads: int) -> np.ndarray:
    """(..., N, H) -> (..., A, N, d)"""
    d = x.shape[-1] // num_heads
    return np.moveaxis(x.reshape(x.shape[:-1] + (num_heads, d)), -2, -3)


def merge_heads(x: np.ndarray) -> np.ndarray:
    """(..., A, N, d) -> (..., N, H)"""
    x = np.moveaxis(x, -3, -2)
    return x.reshape(x.shape[:-2] + (x.shape[-2] * x.shape[-1],))


def blockwise_multihead_attention(x, params: MultiHeadParams, assignment: HeadAssignment,
                                  key_valid=None) -> np.ndarray:
    """
    Head i computes blockwise attention of (X Wq_i, X Wk_i, X Wv_i) under its
    permutation; heads are concatenated in assignment order and projected by Wo.
    """
    x = np.asarray(x)
    if params.num_heads != assignment.total_heads:
        raise ArgumentError(
            f"{params.num_heads} head parameter sets but assignment {assignment} covers "
            f"{assignment.total_heads} heads"
        )
    q = np.stack([x @ h.wq for h in params.heads], axis=-3)
    k = np.stack([x @ h.wk for h in params.heads], axis=-3)
    v = np.stack([x @ h.wv for h in params.heads], axis=-3)
    ctx, caches = heads_forward(q, k, v, assignment, key_valid)
    release_heads(caches)
    return merge_heads(ctx) @ params.wo

"""
Post-LN encoder layer with a hand-derived backward:

    a  = MHA(x) Wo + bo          (blockwise or dense heads)
    h1 = LN(x + dropout(a))
    f  = GELU(h1 W1 + b1) W2 + b2
    y  = LN(h1 + dropout(f))
"""
from dataclasses import dataclass, field

import numpy as np

from src.attention.multihead import heads_backward, heads_forward, merge_heads, release_heads, split_heads
from src.costmodel.tracker import TRACKER, AllocationTracker
from src.encoder.config import ModelConfig
from src.errors import ArgumentError, DivergenceError
from src.numerics.tensor import (
    LayerNormStats,
    gelu,
    gelu_grad,
    layer_norm_backward,
    layer_norm_with_stats,
    matmul,
)


@dataclass
class LayerCache:
    x: np.ndarray
    ctx: np.ndarray          # merged heads, (..., N, H)
    attn: list
    attn_keep: np.ndarray | None
    ln1: LayerNormStats
    h1: np.ndarray
    f1: np.ndarray           # FFN pre-activation
    g: np.ndarray            # GELU(f1)
    ffn_keep: np.ndarray | None
    ln2: LayerNormStats
    tracked: list = field(default_factory=list)
    released: bool = False


def dropout_mask(shape, rate: float, train_mode: bool, rng: np.random.Generator | None):
    """Boolean keep-mask, or None when dropout is inactive."""
    if not train_mode or rate <= 0.0:
        return None
    if rng is None:
        raise ArgumentError("dropout in train mode needs an explicit random generator")
    return rng.random(shape) >= rate


def _apply_keep(x: np.ndarray, keep, rate: float) -> np.ndarray:
    return x if keep is None else x * keep / (1.0 - rate)


def _wgrad(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """sum over leading axes of a^T b, for a (..., I) and b (..., O)."""
    return matmul(a.reshape(-1, a.shape[-1]).T, b.reshape(-1, b.shape[-1]))


def _bgrad(d: np.ndarray) -> np.ndarray:
    return d.reshape(-1, d.shape[-1]).sum(axis=0)


def _check_finite(x: np.ndarray, layer_index: int, where: str) -> None:
    if not np.isfinite(x).all():
        raise DivergenceError(f"non-finite {where} in layer {layer_index}")


def encoder_layer_forward(x, p: dict, config: ModelConfig, train_mode: bool = False,
                          rng: np.random.Generator | None = None, key_valid=None,
                          layer_index: int = 0, tracker: AllocationTracker = TRACKER):
    """
    x: (B, N, H). p: this layer's parameters keyed without the layer prefix.
    Returns (y, cache); the cache stays tracked until backward or release_layer.
    """
    A = config.num_heads
    q = split_heads(x @ p["attn.wq"] + p["attn.bq"], A)
    k = split_heads(x @ p["attn.wk"] + p["attn.bk"], A)
    v = split_heads(x @ p["attn.wv"] + p["attn.bv"], A)
    for t in (q, k, v):
        tracker.track(t, "cache")

    ctx_heads, attn = heads_forward(
        q, k, v, config.assignment, key_valid, dense=config.is_dense,
        dropout=config.attention_dropout if train_mode else 0.0, rng=rng, tracker=tracker,
    )
    ctx = merge_heads(ctx_heads)
    a = ctx @ p["attn.wo"] + p["attn.bo"]
    attn_keep = dropout_mask(a.shape, config.dropout, train_mode, rng)
    h1, ln1 = layer_norm_with_stats(x + _apply_keep(a, attn_keep, config.dropout),
                                    p["ln1.gamma"], p["ln1.beta"], config.layer_norm_eps)

    f1 = h1 @ p["ffn.w1"] + p["ffn.b1"]
    g = gelu(f1)
    f2 = g @ p["ffn.w2"] + p["ffn.b2"]
    ffn_keep = dropout_mask(f2.shape, config.dropout, train_mode, rng)
    y, ln2 = layer_norm_with_stats(h1 + _apply_keep(f2, ffn_keep, config.dropout),
                                   p["ln2.gamma"], p["ln2.beta"], config.layer_norm_eps)
    _check_finite(y, layer_index, "activation")

    kept = [ctx, ln1.xhat, ln1.inv_std, h1, f1, g, ln2.xhat, ln2.inv_std]
    for t in kept:
        tracker.track(t, "cache")
    for keep in (attn_keep, ffn_keep):
        if keep is not None:
            tracker.track(keep, "dropout")
    cache = LayerCache(x, ctx, attn, attn_keep, ln1, h1, f1, g, ffn_keep, ln2,
                       tracked=[("cache", t) for t in [q, k, v] + kept]
                       + [("dropout", m) for m in (attn_keep, ffn_keep) if m is not None])
    return y, cache


def release_layer(cache: LayerCache, tracker: AllocationTracker = TRACKER) -> None:
    if cache.released:
        return
    release_heads(cache.attn, tracker)
    for tag, t in cache.tracked:
        tracker.release(t.nbytes, tag)
    cache.released = True


def encoder_layer_backward(dy, cache: LayerCache, p: dict, config: ModelConfig,
                           tracker: AllocationTracker = TRACKER):
    """Returns (dx, grads keyed like p) and releases the cache."""
    if cache.released:
        raise ArgumentError("layer cache was already consumed by a backward pass")
    grads = {}
    dz2, grads["ln2.gamma"], grads["ln2.beta"] = layer_norm_backward(dy, p["ln2.gamma"], cache.ln2)

    df2 = _apply_keep(dz2, cache.ffn_keep, config.dropout)
    grads["ffn.w2"] = _wgrad(cache.g, df2)
    grads["ffn.b2"] = _bgrad(df2)
    df1 = (df2 @ p["ffn.w2"].T) * gelu_grad(cache.f1)
    grads["ffn.w1"] = _wgrad(cache.h1, df1)
    grads["ffn.b1"] = _bgrad(df1)
    dh1 = dz2 + df1 @ p["ffn.w1"].T

    dz1, grads["ln1.gamma"], grads["ln1.beta"] = layer_norm_backward(dh1, p["ln1.gamma"], cache.ln1)
    da = _apply_keep(dz1, cache.attn_keep, config.dropout)
    grads["attn.wo"] = _wgrad(cache.ctx, da)
    grads["attn.bo"] = _bgrad(da)
    dctx = split_heads(da @ p["attn.wo"].T, config.num_heads)

    dqh, dkh, dvh = heads_backward(cache.attn, dctx, tracker)
    cache.attn = []
    dx = dz1.copy()
    for name, dh in (("q", dqh), ("k", dkh), ("v", dvh)):
        dflat = merge_heads(dh)
        grads[f"attn.w{name}"] = _wgrad(cache.x, dflat)
        grads[f"attn.b{name}"] = _bgrad(dflat)
        dx += dflat @ p[f"attn.w{name}"].T

    release_layer(cache, tracker)
    return dx, grads

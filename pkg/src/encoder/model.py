"""
Toy BlockBERT: token + position embeddings, embedding LN, L post-LN encoder
layers and an MLM head (untied by default), with an exact backward pass.
"""
import logging
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from src.costmodel.tracker import TRACKER, AllocationTracker
from src.encoder.config import ModelConfig
from src.encoder.layers import (
    LayerCache,
    _apply_keep,
    _bgrad,
    _wgrad,
    dropout_mask,
    encoder_layer_backward,
    encoder_layer_forward,
    release_layer,
)
from src.encoder.params import ModelParams
from src.errors import ArgumentError, DimensionError, DivergenceError
from src.numerics.tensor import LayerNormStats, layer_norm_backward, layer_norm_with_stats, matmul

logger = logging.getLogger(__name__)


@dataclass
class ForwardCache:
    ids: np.ndarray
    emb_ln: LayerNormStats
    emb_keep: np.ndarray | None
    hidden: list                 # input of every layer, then the final output
    layers: list[LayerCache]
    logits_shape: tuple
    tracked: list = field(default_factory=list)
    consumed: bool = False


def _check_ids(ids: np.ndarray, config: ModelConfig) -> np.ndarray:
    ids = np.asarray(ids)
    if ids.ndim != 2:
        raise DimensionError(f"token ids must be (B, N), got {ids.shape}")
    if not np.issubdtype(ids.dtype, np.integer):
        raise ArgumentError(f"token ids must be integers, got {ids.dtype}")
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise ArgumentError(f"token id out of range [0, {config.vocab_size}): min {ids.min()}, max {ids.max()}")
    N = ids.shape[1]
    if N > config.padded_seq_len:
        raise DimensionError(f"sequence length {N} exceeds the position table ({config.padded_seq_len})")
    if N % config.num_blocks:
        raise DimensionError(f"sequence length {N} is not a multiple of n={config.num_blocks}")
    return ids


def model_forward_cached(ids, params: ModelParams, config: ModelConfig, train_mode: bool = False,
                         rng: np.random.Generator | None = None, key_valid=None,
                         tracker: AllocationTracker = TRACKER):
    """Returns (logits (B, N, V), cache). Release the cache with model_backward or release_forward."""
    ids = _check_ids(ids, config)
    N = ids.shape[1]
    if key_valid is not None:
        key_valid = np.asarray(key_valid, dtype=bool)
        if key_valid.shape != ids.shape:
            raise DimensionError(f"key_valid {key_valid.shape} does not match ids {ids.shape}")

    e = params["embed.token"][ids] + params["embed.position"][:N]
    h, emb_ln = layer_norm_with_stats(e, params["embed.ln.gamma"], params["embed.ln.beta"],
                                      config.layer_norm_eps)
    emb_keep = dropout_mask(h.shape, config.dropout, train_mode, rng)
    h = _apply_keep(h, emb_keep, config.dropout)
    tracked = [("cache", emb_ln.xhat), ("cache", emb_ln.inv_std)]
    if emb_keep is not None:
        tracked.append(("dropout", emb_keep))
    for tag, t in tracked:
        tracker.track(t, tag)

    hidden = [h]
    layers = []
    try:
        for layer in range(config.num_layers):
            tracked.append(("cache", h))
            tracker.track(h, "cache")
            h, cache = encoder_layer_forward(h, params.layer(layer), config, train_mode, rng,
                                             key_valid, layer, tracker)
            layers.append(cache)
            hidden.append(h)

        tracked.append(("cache", h))
        tracker.track(h, "cache")
        if config.tie_embeddings:
            logits = matmul(h, params["embed.token"].T) + params["head.b"]
        else:
            logits = matmul(h, params["head.w"]) + params["head.b"]
        if not np.isfinite(logits).all():
            raise DivergenceError("non-finite logits in the MLM head")
    except BaseException:
        for cache in layers:
            release_layer(cache, tracker)
        for tag, t in tracked:
            tracker.release(t.nbytes, tag)
        raise
    tracker.track(logits, "cache")
    tracked.append(("cache", logits))

    return logits, ForwardCache(ids, emb_ln, emb_keep, hidden, layers, logits.shape, tracked)


def release_forward(cache: ForwardCache, tracker: AllocationTracker = TRACKER) -> None:
    if cache.consumed:
        return
    for layer_cache in cache.layers:
        release_layer(layer_cache, tracker)
    for tag, t in cache.tracked:
        tracker.release(t.nbytes, tag)
    cache.consumed = True


def model_forward(ids, params: ModelParams, config: ModelConfig, train_mode: bool = False,
                  rng: np.random.Generator | None = None, key_valid=None,
                  tracker: AllocationTracker = TRACKER) -> np.ndarray:
    logits, cache = model_forward_cached(ids, params, config, train_mode, rng, key_valid, tracker)
    release_forward(cache, tracker)
    return logits


def _masked_log_probs(logits, targets, loss_mask):
    logits = np.asarray(logits)
    targets = np.asarray(targets)
    m = np.asarray(loss_mask, dtype=bool)
    if logits.shape[:-1] != targets.shape or targets.shape != m.shape:
        raise DimensionError(f"logits {logits.shape}, targets {targets.shape}, loss_mask {m.shape} disagree")
    count = int(m.sum())
    if count == 0:
        raise ArgumentError("loss_mask selects no position")
    sel = logits[m]
    shifted = sel - sel.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    return shifted - log_z, targets[m], m, count


def mlm_loss(logits, targets, loss_mask) -> float:
    """Mean cross-entropy over the positions where loss_mask is true."""
    log_probs, t, _, count = _masked_log_probs(logits, targets, loss_mask)
    return float(-log_probs[np.arange(count), t].mean())


def mlm_loss_and_grad(logits, targets, loss_mask):
    log_probs, t, m, count = _masked_log_probs(logits, targets, loss_mask)
    rows = np.arange(count)
    loss = float(-log_probs[rows, t].mean())
    g = np.exp(log_probs)
    g[rows, t] -= 1.0
    g /= count
    dlogits = np.zeros(np.shape(logits))
    dlogits[m] = g
    return loss, dlogits


def model_backward(cache: ForwardCache, dlogits, params: ModelParams, config: ModelConfig,
                   tracker: AllocationTracker = TRACKER) -> ModelParams:
    """Gradients for every parameter, keyed like params. Consumes the cache."""
    if cache.consumed:
        raise ArgumentError("forward cache was already consumed or released")
    dlogits = np.asarray(dlogits)
    if dlogits.shape != cache.logits_shape:
        raise DimensionError(f"dlogits {dlogits.shape} does not match cached logits {cache.logits_shape}")
    if len(cache.layers) != config.num_layers:
        raise ArgumentError("forward cache was produced by a different model config")

    grads = params.zeros_like()
    h = cache.hidden[-1]
    if config.tie_embeddings:
        grads["embed.token"] += _wgrad(dlogits, h)
        dh = dlogits @ params["embed.token"]
    else:
        grads["head.w"] = _wgrad(h, dlogits)
        dh = dlogits @ params["head.w"].T
    grads["head.b"] = _bgrad(dlogits)

    for layer in reversed(range(config.num_layers)):
        dh, layer_grads = encoder_layer_backward(dh, cache.layers[layer], params.layer(layer), config, tracker)
        for name, g in layer_grads.items():
            grads[f"layer{layer}.{name}"] = g

    dh = _apply_keep(dh, cache.emb_keep, config.dropout)
    de, grads["embed.ln.gamma"], grads["embed.ln.beta"] = layer_norm_backward(
        dh, params["embed.ln.gamma"], cache.emb_ln)
    N = cache.ids.shape[1]
    np.add.at(grads["embed.token"], cache.ids, de)
    grads["embed.position"][:N] = de.sum(axis=0)

    release_forward(cache, tracker)
    return grads


def loss_and_grads(params: ModelParams, config: ModelConfig, batch, train_mode: bool = False,
                   rng: np.random.Generator | None = None, tracker: AllocationTracker = TRACKER):
    """One forward + backward over an MLMBatch; returns (loss, grads)."""
    logits, cache = model_forward_cached(batch.input_ids, params, config, train_mode, rng,
                                         batch.attention_allowed, tracker)
    try:
        loss, dlogits = mlm_loss_and_grad(logits, batch.targets, batch.loss_mask)
    except BaseException:
        release_forward(cache, tracker)
        raise
    if not np.isfinite(loss):
        release_forward(cache, tracker)
        raise DivergenceError(f"loss is {loss}")
    return loss, model_backward(cache, dlogits, params, config, tracker)


def validation_perplexity(params: ModelParams, config: ModelConfig, batches: Iterable) -> float:
    """exp of the mean cross-entropy over every held-out masked position (eval mode)."""
    total = 0.0
    count = 0
    for batch in batches:
        logits = model_forward(batch.input_ids, params, config, False, None, batch.attention_allowed)
        n = batch.num_predictions
        total += mlm_loss(logits, batch.targets, batch.loss_mask) * n
        count += n
    if count == 0:
        raise ArgumentError("no held-out masked positions to evaluate")
    logger.debug("validation: %d masked positions, mean loss %.6f", count, total / count)
    return float(np.exp(total / count))

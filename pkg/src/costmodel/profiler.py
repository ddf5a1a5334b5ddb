"""
Activation profiling on the allocation tracker: peak live bytes during a run
minus the static (model + optimizer) bytes.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Callable

import numpy as np

from src.costmodel.tracker import TRACKER, AllocationTracker
from src.data.mlm import MLMBatch
from src.encoder.config import ModelConfig
from src.encoder.model import loss_and_grads
from src.encoder.params import ModelParams
from src.errors import ProfilingError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ActivationProfile:
    activation_bytes: int
    peak_bytes: int
    static_bytes: int
    peak_by_tag: dict = field(default_factory=dict)

    @property
    def score_bytes(self) -> int:
        return self.peak_by_tag.get("scores", 0)


def profile_activation(run: Callable[[], Any], tracker: AllocationTracker = TRACKER) -> ActivationProfile:
    """Runs `run` inside the current tracker session and reports its high-water mark."""
    if not tracker.enabled:
        raise ProfilingError("allocation tracker is disabled; open a session first")
    tracker.reset_peak()
    run()
    snap = tracker.snapshot()
    return ActivationProfile(snap.activation_bytes, snap.peak_bytes, snap.static_bytes, snap.peak_by_tag)


@dataclass(frozen=True)
class MeasuredPoint:
    seq_len: int
    batch_size: int
    activation_bytes: float
    score_bytes: int = 0

    @property
    def tokens(self) -> int:
        return self.seq_len * self.batch_size


def synthetic_batch(config: ModelConfig, batch_size: int, rng: np.random.Generator):
    """Random ids with every 7th position as a prediction target; no padding."""
    N = config.padded_seq_len
    ids = rng.integers(5, config.vocab_size, size=(batch_size, N))
    loss_mask = np.zeros((batch_size, N), dtype=bool)
    loss_mask[:, ::7] = True
    return MLMBatch(ids, ids.copy(), loss_mask, np.ones((batch_size, N), dtype=bool))


def measure_training_step(config: ModelConfig, batch_size: int, seed: int = 0,
                          budget_bytes: int | None = None) -> MeasuredPoint:
    """
    One instrumented forward + backward at (config.seq_len, batch_size) with
    dropout off. Opens its own tracker session.
    """
    config = replace(config, dropout=0.0, attention_dropout=0.0)
    rng = np.random.default_rng(seed)
    params = ModelParams.init(config, rng)
    batch = synthetic_batch(config, batch_size, rng)
    with TRACKER.session(budget_bytes) as tracker:
        tracker.register_static(params.nbytes)
        profile = profile_activation(lambda: loss_and_grads(params, config, batch, tracker=tracker), tracker)
    logger.debug("N=%d b=%d n=%d: activation %d bytes (scores %d)", config.seq_len, batch_size,
                 config.num_blocks, profile.activation_bytes, profile.score_bytes)
    return MeasuredPoint(config.padded_seq_len, batch_size, profile.activation_bytes, profile.score_bytes)

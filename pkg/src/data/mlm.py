"""
Masked-language-model corruption: select ~rate of the maskable positions,
replace 80% of them with [MASK], 10% with a random token, keep 10%.
"""
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from src.data.packing import PackedSequence
from src.data.vocab import MASK_ID, NUM_RESERVED, SPECIAL_IDS
from src.errors import ArgumentError, MaskingError

logger = logging.getLogger(__name__)

MASK_FRACTION = 0.8
RANDOM_FRACTION = 0.1


@dataclass(frozen=True)
class MLMRow:
    input_ids: np.ndarray
    targets: np.ndarray
    loss_mask: np.ndarray
    attention_allowed: np.ndarray


@dataclass(frozen=True)
class MLMBatch:
    input_ids: np.ndarray          # (B, N) int64
    targets: np.ndarray            # (B, N) int64, original tokens
    loss_mask: np.ndarray          # (B, N) bool
    attention_allowed: np.ndarray  # (B, N) bool

    @property
    def batch_size(self) -> int:
        return self.input_ids.shape[0]

    @property
    def seq_len(self) -> int:
        return self.input_ids.shape[1]

    @property
    def num_predictions(self) -> int:
        return int(self.loss_mask.sum())


def apply_mlm_masking(seq: PackedSequence, rate: float, seed, vocab_size: int) -> MLMRow:
    """
    Deterministic in (seq, rate, seed). Pad and special tokens are never
    selected. Raises MaskingError when nothing ends up selected.
    """
    if not 0.0 < rate < 1.0:
        raise ArgumentError(f"mask rate must be in (0, 1), got {rate}")
    if vocab_size <= NUM_RESERVED:
        raise ArgumentError(f"vocab_size {vocab_size} leaves no ordinary tokens")

    ids = seq.ids
    maskable = seq.attention_allowed & ~np.isin(ids, SPECIAL_IDS)
    if not maskable.any():
        raise MaskingError("sequence has no maskable positions")

    rng = np.random.default_rng(seed)
    selected = maskable & (rng.random(ids.size) < rate)
    if not selected.any():
        raise MaskingError(f"no position selected at rate {rate}")

    roll = rng.random(ids.size)
    to_mask = selected & (roll < MASK_FRACTION)
    to_random = selected & (roll >= MASK_FRACTION) & (roll < MASK_FRACTION + RANDOM_FRACTION)

    inputs = ids.copy()
    inputs[to_mask] = MASK_ID
    inputs[to_random] = rng.integers(NUM_RESERVED, vocab_size, size=int(to_random.sum()))
    return MLMRow(inputs, ids.copy(), selected, seq.attention_allowed.copy())


def make_mlm_batch(seqs: Sequence[PackedSequence], rate: float, seed: int,
                   vocab_size: int) -> MLMBatch:
    """Row i is masked with seed (seed, i); rows that cannot be masked are skipped."""
    rows = []
    for i, seq in enumerate(seqs):
        try:
            rows.append(apply_mlm_masking(seq, rate, (seed, i), vocab_size))
        except MaskingError as exc:
            logger.warning("skipping sequence %d of batch: %s", i, exc)
    if not rows:
        raise MaskingError("every sequence in the batch was skipped")
    lengths = {row.input_ids.size for row in rows}
    if len(lengths) != 1:
        raise ArgumentError(f"batch mixes sequence lengths {sorted(lengths)}")
    return MLMBatch(
        input_ids=np.stack([r.input_ids for r in rows]),
        targets=np.stack([r.targets for r in rows]),
        loss_mask=np.stack([r.loss_mask for r in rows]),
        attention_allowed=np.stack([r.attention_allowed for r in rows]),
    )

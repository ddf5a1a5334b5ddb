from dataclasses import dataclass
from typing import Sequence

import numpy as np

from src.data.vocab import PAD_ID
from src.errors import ArgumentError, DimensionError


@dataclass(frozen=True)
class PackedSequence:
    ids: np.ndarray
    attention_allowed: np.ndarray
    doc_index: int = -1

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        allowed = np.asarray(self.attention_allowed, dtype=bool)
        if ids.ndim != 1 or ids.shape != allowed.shape:
            raise DimensionError(f"ids {ids.shape} and attention_allowed {allowed.shape} must be equal 1-d")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "attention_allowed", allowed)

    def __len__(self) -> int:
        return int(self.ids.size)

    @property
    def num_tokens(self) -> int:
        return int(self.attention_allowed.sum())


def _padded(tokens: np.ndarray, length: int, doc_index: int) -> PackedSequence:
    ids = np.full(length, PAD_ID, dtype=np.int64)
    ids[:tokens.size] = tokens
    allowed = np.zeros(length, dtype=bool)
    allowed[:tokens.size] = True
    return PackedSequence(ids, allowed, doc_index)


def pack_sequences(docs: Sequence[Sequence[int]], N: int) -> list[PackedSequence]:
    """
    Greedy fill up to N tokens without ever crossing a document boundary:
    each document yields ceil(len / N) sequences, the last one right-padded.
    """
    if N < 2:
        raise ArgumentError(f"sequence length must be at least 2, got {N}")
    out = []
    for d, doc in enumerate(docs):
        tokens = np.asarray(doc, dtype=np.int64)
        for start in range(0, tokens.size, N):
            out.append(_padded(tokens[start:start + N], N, d))
    return out


def pad_to_block_multiple(seq: PackedSequence, n: int) -> PackedSequence:
    if n < 1:
        raise ArgumentError(f"block count must be positive, got {n}")
    target = -(-len(seq) // n) * n
    if target == len(seq):
        return seq
    ids = np.concatenate([seq.ids, np.full(target - len(seq), PAD_ID, dtype=np.int64)])
    allowed = np.concatenate([seq.attention_allowed, np.zeros(target - len(seq), dtype=bool)])
    return PackedSequence(ids, allowed, seq.doc_index)


@dataclass(frozen=True)
class Window:
    start: int
    tokens: np.ndarray


def sliding_window_split(tokens: Sequence[int], N: int, stride: int = 128) -> list[Window]:
    """
    Windows of at most N tokens starting at 0, stride, 2*stride, ...; the last
    window is clamped to end exactly at the sequence end.
    """
    if stride <= 0:
        raise ArgumentError(f"stride must be positive, got {stride}")
    if stride > N:
        raise ArgumentError(f"stride {stride} larger than window {N} would leave gaps")
    tokens = np.asarray(tokens)
    length = tokens.size
    if length <= N:
        return [Window(0, tokens)]

    starts = list(range(0, length - N, stride))
    if starts[-1] + N < length:
        starts.append(length - N)
    return [Window(s, tokens[s:s + N]) for s in starts]

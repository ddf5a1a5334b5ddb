"""
Permutation-defined block masks.

Row i (1-based) of the mask for (N, n, pi) is set exactly on the columns of
block pi(block(i)), with block(x) = floor((x - 1) * n / N) + 1. When n does not
divide N the mask is built over N padded up to the next multiple of n.
"""
from dataclasses import dataclass

import numpy as np

from src.errors import ArgumentError, DegenerateRowError, DimensionError
from src.masking.permutation import Permutation


def padded_length(seq_len: int, num_blocks: int) -> int:
    return -(-seq_len // num_blocks) * num_blocks


def block_index(seq_len: int, num_blocks: int) -> np.ndarray:
    """0-based block id of every position (seq_len must already be padded)."""
    return (np.arange(seq_len) * num_blocks) // seq_len


@dataclass(frozen=True)
class BlockMaskSpec:
    seq_len: int
    num_blocks: int
    perm: Permutation

    def __post_init__(self):
        if self.seq_len < 1:
            raise ArgumentError(f"seq_len must be positive, got {self.seq_len}")
        if not 1 <= self.num_blocks <= self.seq_len:
            raise ArgumentError(f"need 1 <= n <= N, got n={self.num_blocks}, N={self.seq_len}")
        if self.perm.n != self.num_blocks:
            raise ArgumentError(f"permutation {self.perm} has {self.perm.n} blocks, spec has {self.num_blocks}")

    @property
    def padded_len(self) -> int:
        return padded_length(self.seq_len, self.num_blocks)

    @property
    def block_size(self) -> int:
        return self.padded_len // self.num_blocks


@dataclass(frozen=True, eq=False)
class Mask:
    """Immutable N x N binary attention mask; True means the entry is kept."""
    bits: np.ndarray

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool, copy=True)
        if bits.ndim != 2:
            raise DimensionError(f"mask must be 2-d, got shape {bits.shape}")
        empty = ~bits.any(axis=1)
        if empty.any():
            raise DegenerateRowError(f"mask row {int(np.argmax(empty))} has no set bit")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @classmethod
    def dense(cls, n: int) -> "Mask":
        return cls(np.ones((n, n), dtype=bool))

    @classmethod
    def from_packed(cls, packed: np.ndarray, n_cols: int) -> "Mask":
        return cls(np.unpackbits(packed, axis=1, count=n_cols).astype(bool))

    @property
    def n_rows(self) -> int:
        return self.bits.shape[0]

    @property
    def n_cols(self) -> int:
        return self.bits.shape[1]

    def packed(self) -> np.ndarray:
        return np.packbits(self.bits, axis=1)

    def transpose(self) -> "Mask":
        return Mask(self.bits.T)

    def with_key_padding(self, attention_allowed: np.ndarray) -> "Mask":
        """Intersect with a key-padding mask (False at pad positions)."""
        allowed = np.asarray(attention_allowed, dtype=bool)
        if allowed.shape != (self.n_cols,):
            raise DimensionError(f"key padding {allowed.shape} does not match mask {self.bits.shape}")
        return Mask(self.bits & allowed[None, :])

    def __eq__(self, other) -> bool:
        return isinstance(other, Mask) and np.array_equal(self.bits, other.bits)

    __hash__ = None


def build_block_mask(spec: BlockMaskSpec) -> Mask:
    N = spec.padded_len
    block = block_index(N, spec.num_blocks)
    target = spec.perm.indices()[block]
    return Mask(target[:, None] == block[None, :])


def build_block_mask_packed(spec: BlockMaskSpec) -> np.ndarray:
    """
    Same mask as build_block_mask, produced directly in numpy.packbits row
    layout. Only the n distinct row patterns are ever expanded.
    """
    N = spec.padded_len
    n = spec.num_blocks
    block = block_index(N, n)
    patterns = np.zeros((n, N), dtype=bool)
    for b, target in enumerate(spec.perm.indices()):
        patterns[b, block == target] = True
    return np.packbits(patterns, axis=1)[block]


def mask_density(m: Mask) -> float:
    return float(np.count_nonzero(m.bits)) / float(m.n_rows * m.n_cols)

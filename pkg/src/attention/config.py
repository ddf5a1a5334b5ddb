from dataclasses import dataclass

import numpy as np

from src.errors import ArgumentError, DimensionError
from src.masking.block_mask import padded_length


@dataclass(frozen=True)
class AttentionConfig:
    seq_len: int
    num_heads: int
    hidden: int
    num_blocks: int = 1

    def __post_init__(self):
        if self.num_heads < 1 or self.hidden % self.num_heads:
            raise ArgumentError(f"A={self.num_heads} must divide H={self.hidden}")
        if not 1 <= self.num_blocks <= self.seq_len:
            raise ArgumentError(f"need 1 <= n <= N, got n={self.num_blocks}, N={self.seq_len}")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.num_heads

    @property
    def padded_seq_len(self) -> int:
        return padded_length(self.seq_len, self.num_blocks)


@dataclass(frozen=True)
class HeadParams:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray

    def __post_init__(self):
        if not self.wq.shape == self.wk.shape == self.wv.shape or self.wq.ndim != 2:
            raise DimensionError(
                f"head projections disagree: {self.wq.shape}, {self.wk.shape}, {self.wv.shape}"
            )


@dataclass(frozen=True)
class MultiHeadParams:
    """Per-head H x d projections plus the shared H x H output projection."""
    heads: tuple[HeadParams, ...]
    wo: np.ndarray

    def __post_init__(self):
        hidden = self.heads[0].wq.shape[0]
        if self.wo.shape != (hidden, hidden):
            raise DimensionError(f"output projection {self.wo.shape} should be {(hidden, hidden)}")
        if sum(h.wq.shape[1] for h in self.heads) != hidden:
            raise DimensionError("head widths do not add up to the hidden size")

    @property
    def num_heads(self) -> int:
        return len(self.heads)

    @classmethod
    def from_fused(cls, wq, wk, wv, wo, num_heads: int) -> "MultiHeadParams":
        """Split H x H projections column-wise into num_heads slices."""
        d = wq.shape[1] // num_heads
        heads = tuple(
            HeadParams(wq[:, i * d:(i + 1) * d], wk[:, i * d:(i + 1) * d], wv[:, i * d:(i + 1) * d])
            for i in range(num_heads)
        )
        return cls(heads, wo)

    @classmethod
    def random(cls, config: AttentionConfig, rng: np.random.Generator, std: float = 0.02) -> "MultiHeadParams":
        H, d = config.hidden, config.head_dim
        heads = tuple(
            HeadParams(*(rng.normal(0.0, std, size=(H, d)) for _ in range(3)))
            for _ in range(config.num_heads)
        )
        return cls(heads, rng.normal(0.0, std, size=(H, H)))

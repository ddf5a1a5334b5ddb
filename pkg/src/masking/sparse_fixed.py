"""
Fixed-mode Sparse Transformer mask, bidirectional variant.

Every query sees its own stride window (the boundary token closing the
previous window included) and the summary columns: the last c positions of
each window plus the first position after it. This follows the Fairseq
bidirectional layout rather than the symmetric closure of the causal fixed
mask (M or M^T), so the result is not symmetric: summary columns are seen by
every row, but summary rows only see their own window. It yields 44.20%
density at N=512 and 34.97% at N=1024 for stride 128, c=32.
"""
from dataclasses import dataclass

import numpy as np

from src.errors import ArgumentError
from src.masking.block_mask import Mask


@dataclass(frozen=True)
class SparseFixedMaskSpec:
    seq_len: int
    stride: int
    expressivity: int

    def __post_init__(self):
        if not 0 < self.expressivity < self.stride:
            raise ArgumentError(
                f"need 0 < c < stride, got c={self.expressivity}, stride={self.stride}"
            )
        if self.stride > self.seq_len:
            raise ArgumentError(f"stride {self.stride} exceeds seq_len {self.seq_len}")


def _checkpoint(index: int, stride: int, c: int) -> int:
    if index % stride == 0 and index != 0:
        return index - c
    return (index // stride) * stride + stride - c


def summary_columns(spec: SparseFixedMaskSpec) -> np.ndarray:
    N, stride, c = spec.seq_len, spec.stride, spec.expressivity
    cols = np.zeros(N, dtype=bool)
    start = _checkpoint(0, stride, c)
    while start <= N - 1:
        cols[start:min(start + c + 1, N)] = True
        start = _checkpoint(start + stride, stride, c)
    return cols


def build_sparse_fixed_mask(spec: SparseFixedMaskSpec) -> Mask:
    N, stride = spec.seq_len, spec.stride
    bits = np.repeat(summary_columns(spec)[None, :], N, axis=0)

    i = np.arange(N)
    rounded = ((i + stride) // stride) * stride
    boundary = (i % stride == 0) & (i != 0)
    lo = np.where(boundary, i - stride, np.maximum(0, rounded - stride))
    hi = np.where(boundary, np.minimum(N, i + 1), np.minimum(N, rounded + 1))

    cols = np.arange(N)[None, :]
    bits |= (cols >= lo[:, None]) & (cols < hi[:, None])
    return Mask(bits)

"""
Dense numerical core.

Tensors are plain numpy arrays, row-major, float64 unless the caller opts in
to float32 (benchmark path only). Every function here is pure.
"""
from dataclasses import dataclass

import numpy as np

from src.errors import ArgumentError, DegenerateRowError, DimensionError

GELU_COEF = 0.044715
_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)


def as_tensor(data, dtype=np.float64) -> np.ndarray:
    """
    Convert to a contiguous tensor of rank 1-3.

    Only float64 and float32 are accepted as dtypes.
    """
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ArgumentError(f"unsupported dtype {dtype}; use float64 or float32")
    arr = np.ascontiguousarray(data, dtype=dtype)
    if not 1 <= arr.ndim <= 3:
        raise DimensionError(f"tensor rank must be 1-3, got shape {arr.shape}")
    if 0 in arr.shape:
        raise DimensionError(f"tensor dims must be positive, got shape {arr.shape}")
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    (m x k) @ (k x p), or batched (B x m x k) @ (k x p).

    For a fixed thread configuration numpy reduces over k in a fixed order,
    so identical inputs give bit-identical outputs run to run.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    dtype = np.result_type(a, b, np.float32)
    a, b = as_tensor(a, dtype), as_tensor(b, dtype)
    if a.ndim not in (2, 3) or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"cannot multiply shape {a.shape} by shape {b.shape}")
    return a @ b


def softmax_rows(x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """
    Softmax over the last axis, stabilized by row-max subtraction.

    -inf entries come out exactly 0. A row made only of -inf has no
    distribution and raises DegenerateRowError. With ``out`` given (may be
    ``x`` itself) the result is written there instead of a new buffer.
    """
    x = np.asarray(x)
    row_max = x.max(axis=-1, keepdims=True)
    dead = np.isneginf(row_max[..., 0])
    if dead.any():
        where = tuple(int(i) for i in np.argwhere(dead)[0])
        raise DegenerateRowError(f"softmax row {where} is entirely -inf")
    if out is None:
        out = np.empty_like(x)
    np.subtract(x, row_max, out=out)
    np.exp(out, out=out)
    out /= out.sum(axis=-1, keepdims=True)
    return out


@dataclass(frozen=True)
class LayerNormStats:
    xhat: np.ndarray
    inv_std: np.ndarray


def layer_norm_with_stats(x, gamma, beta, eps: float = 1e-12):
    """Layer norm over the last axis, also returning what backward needs."""
    if eps < 0:
        raise ArgumentError(f"eps must be non-negative, got {eps}")
    x = np.asarray(x)
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise DimensionError(
            f"gamma {gamma.shape} / beta {beta.shape} do not match input {x.shape}"
        )
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    return xhat * gamma + beta, LayerNormStats(xhat=xhat, inv_std=inv_std)


def layer_norm(x, gamma, beta, eps: float = 1e-12) -> np.ndarray:
    y, _ = layer_norm_with_stats(x, gamma, beta, eps)
    return y


def layer_norm_backward(dy, gamma, stats: LayerNormStats):
    """Returns (dx, dgamma, dbeta); dgamma/dbeta are summed over leading axes."""
    xhat = stats.xhat
    width = xhat.shape[-1]
    lead = tuple(range(xhat.ndim - 1))
    dgamma = (dy * xhat).sum(axis=lead)
    dbeta = dy.sum(axis=lead)
    dxhat = dy * gamma
    dx = (stats.inv_std / width) * (
        width * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


def gelu(x) -> np.ndarray:
    """Tanh-approximation GELU."""
    x = np.asarray(x)
    inner = _SQRT_2_OVER_PI * (x + GELU_COEF * x ** 3)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu_grad(x) -> np.ndarray:
    x = np.asarray(x)
    inner = _SQRT_2_OVER_PI * (x + GELU_COEF * x ** 3)
    t = np.tanh(inner)
    d_inner = _SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEF * x ** 2)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner

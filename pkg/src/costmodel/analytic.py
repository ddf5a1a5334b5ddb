"""
Analytic cost model. FLOP convention: one multiply-add = 2 FLOPs.
"""
from dataclasses import dataclass

from src.encoder.config import ModelConfig
from src.encoder.params import count_parameters
from src.errors import ArgumentError, PaddingRequiredError

FLOPS_CONVENTION = "1 multiply-add = 2 FLOPs"
OPTIMIZER_MULTIPLIERS = (3, 5)
GIB = 1024 ** 3


def _check_blocks(N: int, n: int) -> None:
    if N < 1 or n < 1:
        raise ArgumentError(f"need N >= 1 and n >= 1, got N={N}, n={n}")
    if N % n:
        raise PaddingRequiredError(f"n={n} does not divide N={N}")


def score_floats(N: int, n: int) -> int:
    """Score-matrix entries per head and layer: n blocks of (N/n)^2."""
    _check_blocks(N, n)
    return N * N // n


def score_flops(N: int, d: int, n: int = 1) -> int:
    """QK^T FLOPs for one head in one layer."""
    return 2 * score_floats(N, n) * d


def attention_flops(N: int, d: int, A: int, L: int, n: int = 1) -> int:
    """QK^T plus PV over all heads and layers; projections are counted separately."""
    return 2 * score_flops(N, d, n) * A * L


def projection_flops(N: int, H: int, L: int) -> int:
    """Q, K, V and output projections."""
    return 2 * 4 * N * H * H * L


def ffn_flops(N: int, H: int, L: int, ffn_hidden: int | None = None) -> int:
    F = 4 * H if ffn_hidden is None else ffn_hidden
    return 2 * 2 * N * H * F * L


@dataclass(frozen=True)
class CostReport:
    seq_len: int
    num_blocks: int
    num_heads: int
    num_layers: int
    head_dim: int
    attention_score_floats: int      # all heads and layers, one sequence
    attention_flops: int
    projection_flops: int
    ffn_flops: int
    reduction_factor: float          # dense score floats / blockwise score floats

    @property
    def total_flops(self) -> int:
        return self.attention_flops + self.projection_flops + self.ffn_flops


def cost_report(config: ModelConfig) -> CostReport:
    N, n = config.padded_seq_len, config.num_blocks
    A, L, d, H = config.num_heads, config.num_layers, config.head_dim, config.hidden
    dense = score_floats(N, 1) * A * L
    blocked = score_floats(N, n) * A * L
    return CostReport(
        seq_len=N,
        num_blocks=n,
        num_heads=A,
        num_layers=L,
        head_dim=d,
        attention_score_floats=blocked,
        attention_flops=attention_flops(N, d, A, L, n),
        projection_flops=projection_flops(N, H, L),
        ffn_flops=ffn_flops(N, H, L, config.ffn_hidden),
        reduction_factor=dense / blocked,
    )


@dataclass(frozen=True)
class MemoryBreakdown:
    model_bytes: int = 0
    optimizer_bytes: int = 0
    activation_bytes: int = 0

    def __post_init__(self):
        for name in ("model_bytes", "optimizer_bytes", "activation_bytes"):
            if getattr(self, name) < 0:
                raise ArgumentError(f"{name} must be non-negative, got {getattr(self, name)}")

    @property
    def total_bytes(self) -> int:
        return self.model_bytes + self.optimizer_bytes + self.activation_bytes

    def gib(self) -> dict:
        return {
            "model": self.model_bytes / GIB,
            "optimizer": self.optimizer_bytes / GIB,
            "activation": self.activation_bytes / GIB,
            "total": self.total_bytes / GIB,
        }


def static_memory(config: ModelConfig | int, bytes_per_param: int = 2,
                  optimizer_multiplier: int = 3) -> MemoryBreakdown:
    """
    Model + optimizer memory. `config` may also be a raw parameter count.
    optimizer_multiplier is 3 (grads, m, v) or 5 (mixed-precision master copies).
    """
    if optimizer_multiplier not in OPTIMIZER_MULTIPLIERS:
        raise ArgumentError(f"optimizer multiplier must be one of {OPTIMIZER_MULTIPLIERS}, got {optimizer_multiplier}")
    if bytes_per_param < 1:
        raise ArgumentError(f"bytes_per_param must be positive, got {bytes_per_param}")
    count = config if isinstance(config, int) else count_parameters(config)
    if count < 0:
        raise ArgumentError(f"parameter count must be non-negative, got {count}")
    model = count * bytes_per_param
    return MemoryBreakdown(model_bytes=model, optimizer_bytes=optimizer_multiplier * model)

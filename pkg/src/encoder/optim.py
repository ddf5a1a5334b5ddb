from dataclasses import dataclass

import numpy as np

from src.encoder.params import ModelParams
from src.errors import ArgumentError, DimensionError, DivergenceError

# 10k warmup steps out of 2.4M total in the full-scale recipe
WARMUP_FRACTION = 10_000 / 2_400_000


@dataclass(frozen=True)
class AdamConfig:
    peak_lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    clip_norm: float | None = 1.0
    total_steps: int = 1000
    warmup_steps: int | None = None

    def __post_init__(self):
        if self.peak_lr < 0:
            raise ArgumentError(f"peak_lr must be non-negative, got {self.peak_lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ArgumentError(f"betas must be in [0, 1): {self.beta1}, {self.beta2}")
        if self.total_steps < 1:
            raise ArgumentError(f"total_steps must be >= 1, got {self.total_steps}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ArgumentError(f"clip_norm must be positive, got {self.clip_norm}")

    @property
    def warmup(self) -> int:
        if self.warmup_steps is not None:
            return self.warmup_steps
        return max(1, round(self.total_steps * WARMUP_FRACTION))


def learning_rate(step: int, cfg: AdamConfig) -> float:
    """Linear warmup to peak_lr over cfg.warmup steps, then linear decay to 0 at total_steps."""
    warmup = cfg.warmup
    if warmup > 0 and step <= warmup:
        return cfg.peak_lr * step / warmup
    span = cfg.total_steps - warmup
    if span <= 0:
        return 0.0
    return cfg.peak_lr * max(0.0, (cfg.total_steps - step) / span)


@dataclass
class AdamState:
    m: ModelParams
    v: ModelParams
    step: int = 0

    @classmethod
    def zeros(cls, params: ModelParams) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0)

    @property
    def nbytes(self) -> int:
        return self.m.nbytes + self.v.nbytes


def clip_by_global_norm(grads: ModelParams, max_norm: float | None) -> tuple[ModelParams, float]:
    norm = grads.global_norm()
    if max_norm is None or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return ModelParams({k: g * scale for k, g in grads.items()}), norm


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState, cfg: AdamConfig):
    """
    One AdamW update with bias correction. Weight decay is decoupled and only
    applies to matrices (biases, LN and scalar parameters are not decayed).
    Returns (new params, new state, info dict with lr and the pre-clip grad norm).
    """
    if list(params) != list(grads) or list(params) != list(state.m):
        raise DimensionError("params, grads and optimizer state name different tensors")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise DimensionError(f"{name}: grad {g.shape} vs param {params[name].shape}")
        if not np.isfinite(g).all():
            raise DivergenceError(f"non-finite gradient for {name} at step {state.step + 1}")

    t = state.step + 1
    lr = learning_rate(t, cfg)
    grads, norm = clip_by_global_norm(grads, cfg.clip_norm)
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t

    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        if p.ndim >= 2 and cfg.weight_decay:
            update = update + cfg.weight_decay * p
        new_p[name] = p - lr * update
        new_m[name] = m
        new_v[name] = v

    info = {"lr": lr, "grad_norm": norm}
    return ModelParams(new_p), AdamState(ModelParams(new_m), ModelParams(new_v), t), info

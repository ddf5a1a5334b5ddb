from typing import Iterator

import numpy as np

from src.encoder.config import ModelConfig
from src.errors import DimensionError

LAYER_SHAPES = (
    # (name, rows, cols) in units of H, F (=4H); cols None for vectors
    ("attn.wq", "H", "H"), ("attn.bq", "H", None),
    ("attn.wk", "H", "H"), ("attn.bk", "H", None),
    ("attn.wv", "H", "H"), ("attn.bv", "H", None),
    ("attn.wo", "H", "H"), ("attn.bo", "H", None),
    ("ln1.gamma", "H", None), ("ln1.beta", "H", None),
    ("ffn.w1", "H", "F"), ("ffn.b1", "F", None),
    ("ffn.w2", "F", "H"), ("ffn.b2", "H", None),
    ("ln2.gamma", "H", None), ("ln2.beta", "H", None),
)


def parameter_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Every parameter name and shape, in checkpoint declaration order."""
    H, F, V = config.hidden, config.ffn_hidden, config.vocab_size
    dims = {"H": H, "F": F}
    shapes = [
        ("embed.token", (V, H)),
        ("embed.position", (config.padded_seq_len, H)),
        ("embed.ln.gamma", (H,)),
        ("embed.ln.beta", (H,)),
    ]
    for layer in range(config.num_layers):
        for name, rows, cols in LAYER_SHAPES:
            shape = (dims[rows],) if cols is None else (dims[rows], dims[cols])
            shapes.append((f"layer{layer}.{name}", shape))
    if not config.tie_embeddings:
        shapes.append(("head.w", (H, V)))
    shapes.append(("head.b", (V,)))
    return shapes


def count_parameters(config: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in parameter_shapes(config))


class ModelParams:
    """Named float64 tensors in declaration order."""

    def __init__(self, tensors: dict[str, np.ndarray]):
        self.tensors = dict(tensors)

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator) -> "ModelParams":
        tensors = {}
        for name, shape in parameter_shapes(config):
            if name.endswith("gamma"):
                tensors[name] = np.ones(shape)
            elif len(shape) == 1:
                tensors[name] = np.zeros(shape)
            else:
                tensors[name] = rng.normal(0.0, config.init_std, size=shape)
        return cls(tensors)

    @classmethod
    def zeros(cls, config: ModelConfig) -> "ModelParams":
        return cls({name: np.zeros(shape) for name, shape in parameter_shapes(config)})

    def zeros_like(self) -> "ModelParams":
        return ModelParams({k: np.zeros_like(v) for k, v in self.tensors.items()})

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.tensors.items()})

    def layer(self, index: int) -> dict[str, np.ndarray]:
        prefix = f"layer{index}."
        return {k[len(prefix):]: v for k, v in self.tensors.items() if k.startswith(prefix)}

    def check_shapes(self, config: ModelConfig) -> None:
        expected = parameter_shapes(config)
        if [n for n, _ in expected] != list(self.tensors):
            raise DimensionError("parameter names do not match the model config")
        for name, shape in expected:
            if self.tensors[name].shape != shape:
                raise DimensionError(f"{name}: expected {shape}, got {self.tensors[name].shape}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.tensors[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def num_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())

    @property
    def nbytes(self) -> int:
        return sum(v.nbytes for v in self.tensors.values())

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.vdot(v, v)) for v in self.tensors.values())))

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.tensors.values())

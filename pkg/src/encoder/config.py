from dataclasses import asdict, dataclass, replace

from src.errors import ArgumentError
from src.masking.block_mask import padded_length
from src.masking.permutation import HeadAssignment

ATTENTION_KINDS = ("blockwise", "dense")


def default_assignment(num_heads: int, num_blocks: int) -> HeadAssignment:
    """
    Mostly-identity split: every non-identity shift gets max(1, A // 6)
    heads, the identity the rest (12 heads -> 10:2 for n=2, 8:2:2 for n=3).
    """
    if num_blocks == 1:
        return HeadAssignment.from_counts([num_heads])
    share = max(1, num_heads // 6)
    rest = num_heads - share * (num_blocks - 1)
    if rest < 1:
        raise ArgumentError(f"cannot spread {num_heads} heads over {num_blocks} permutations")
    return HeadAssignment.from_counts([rest] + [share] * (num_blocks - 1))


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 2
    hidden: int = 64
    num_heads: int = 4
    seq_len: int = 128
    num_blocks: int = 1
    vocab_size: int = 1024
    assignment: HeadAssignment | None = None
    dropout: float = 0.1
    attention_dropout: float = 0.1
    tie_embeddings: bool = False
    attention: str = "blockwise"
    layer_norm_eps: float = 1e-12
    init_std: float = 0.02

    def __post_init__(self):
        for name in ("num_layers", "hidden", "num_heads", "seq_len", "num_blocks", "vocab_size"):
            if getattr(self, name) < 1:
                raise ArgumentError(f"{name} must be positive, got {getattr(self, name)}")
        if self.hidden % self.num_heads:
            raise ArgumentError(f"A={self.num_heads} must divide H={self.hidden}")
        if self.num_blocks > self.seq_len:
            raise ArgumentError(f"n={self.num_blocks} blocks exceed N={self.seq_len}")
        if self.attention not in ATTENTION_KINDS:
            raise ArgumentError(f"attention must be one of {ATTENTION_KINDS}, got {self.attention!r}")
        for name in ("dropout", "attention_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ArgumentError(f"{name} must be in [0, 1), got {getattr(self, name)}")

        assignment = self.assignment
        if assignment is None:
            assignment = default_assignment(self.num_heads, self.num_blocks)
        elif isinstance(assignment, str):
            assignment = HeadAssignment.parse(assignment)
        object.__setattr__(self, "assignment", assignment)
        if assignment.num_blocks != self.num_blocks:
            raise ArgumentError(f"assignment {assignment} is over {assignment.num_blocks} blocks, config has n={self.num_blocks}")
        if assignment.total_heads != self.num_heads:
            raise ArgumentError(f"assignment {assignment} covers {assignment.total_heads} heads, config has A={self.num_heads}")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.num_heads

    @property
    def ffn_hidden(self) -> int:
        return 4 * self.hidden

    @property
    def padded_seq_len(self) -> int:
        return padded_length(self.seq_len, self.num_blocks)

    @property
    def is_dense(self) -> bool:
        return self.attention == "dense"

    def with_blocks(self, num_blocks: int, assignment: HeadAssignment | str | None = None) -> "ModelConfig":
        return replace(self, num_blocks=num_blocks, assignment=assignment)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["assignment"] = self.assignment.label
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ArgumentError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


def bert_base(seq_len: int = 512, num_blocks: int = 1) -> ModelConfig:
    return ModelConfig(num_layers=12, hidden=768, num_heads=12, seq_len=seq_len,
                       num_blocks=num_blocks, vocab_size=30522, tie_embeddings=True)


def bert_large(seq_len: int = 512, num_blocks: int = 1) -> ModelConfig:
    return ModelConfig(num_layers=24, hidden=1024, num_heads=16, seq_len=seq_len,
                       num_blocks=num_blocks, vocab_size=30522, tie_embeddings=True)


def toy(seq_len: int = 128, num_blocks: int = 1, **overrides) -> ModelConfig:
    return ModelConfig(num_layers=2, hidden=64, num_heads=4, seq_len=seq_len,
                       num_blocks=num_blocks, vocab_size=1024, **overrides)


PRESETS = {"bert_base": bert_base, "bert_large": bert_large, "toy": toy}


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    max_steps: int = 1000
    seed: int = 0
    validation_interval: int = 100
    checkpoint_interval: int = 0     # 0: only the final step
    log_interval: int = 10
    mask_rate: float = 0.15

    def __post_init__(self):
        if self.batch_size < 1:
            raise ArgumentError(f"batch size must be >= 1, got {self.batch_size}")
        if self.max_steps < 1:
            raise ArgumentError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.seed < 0:
            raise ArgumentError(f"seed must be non-negative, got {self.seed}")
        if not 0.0 < self.mask_rate < 1.0:
            raise ArgumentError(f"mask_rate must be in (0, 1), got {self.mask_rate}")

    def tokens_per_batch(self, seq_len: int) -> int:
        return self.batch_size * seq_len

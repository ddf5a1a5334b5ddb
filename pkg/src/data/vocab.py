from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from src.errors import ArgumentError

PAD_ID = 0
MASK_ID = 1
CLS_ID = 2
SEP_ID = 3
UNK_ID = 4
RESERVED_TOKENS = ("[PAD]", "[MASK]", "[CLS]", "[SEP]", "[UNK]")
NUM_RESERVED = len(RESERVED_TOKENS)
# never selected for MLM corruption
SPECIAL_IDS = (PAD_ID, MASK_ID, CLS_ID, SEP_ID)


@dataclass(frozen=True)
class Vocab:
    """id -> token list; the reserved tokens always occupy ids 0..4."""
    tokens: tuple[str, ...]
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        tokens = tuple(self.tokens)
        if tokens[:NUM_RESERVED] != RESERVED_TOKENS:
            tokens = RESERVED_TOKENS + tuple(t for t in tokens if t not in RESERVED_TOKENS)
        if len(set(tokens)) != len(tokens):
            raise ArgumentError("vocabulary contains duplicate tokens")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "_index", {tok: i for i, tok in enumerate(tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        return np.fromiter((self.id_of(t) for t in tokens), dtype=np.int64)

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[int(i)] for i in ids]

    def save(self, path: str | Path) -> None:
        """One token per line; line k holds id k + NUM_RESERVED."""
        with open(path, "w", encoding="utf-8") as f:
            for tok in self.tokens[NUM_RESERVED:]:
                f.write(tok + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        with open(path, "r", encoding="utf-8") as f:
            words = [line.rstrip("\n") for line in f if line.strip()]
        return cls(RESERVED_TOKENS + tuple(words))


def build_vocab(text: str, max_size: int) -> Vocab:
    """
    Frequency-ranked whitespace tokens, ties broken lexicographically,
    reserved ids first. Tokens past max_size (reserved included) are dropped
    and will encode as [UNK].
    """
    if max_size <= NUM_RESERVED:
        raise ArgumentError(f"max_size must exceed the {NUM_RESERVED} reserved ids, got {max_size}")
    counts = Counter(tok for tok in text.split() if tok not in RESERVED_TOKENS)
    if not counts:
        raise ArgumentError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    keep = [tok for tok, _ in ranked[:max_size - NUM_RESERVED]]
    return Vocab(RESERVED_TOKENS + tuple(keep))

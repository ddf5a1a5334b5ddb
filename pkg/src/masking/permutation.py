from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from src.errors import ArgumentError, PermutationError


@dataclass(frozen=True)
class Permutation:
    """
    A bijection over block indices {1..n}, stored 1-based as in the block
    mask definition: mapping[i - 1] == pi(i).
    """
    mapping: tuple[int, ...]

    def __post_init__(self):
        try:
            mapping = tuple(int(v) for v in self.mapping)
        except (TypeError, ValueError) as exc:
            raise PermutationError(f"permutation entries must be integers: {self.mapping!r}") from exc
        object.__setattr__(self, "mapping", mapping)
        if not mapping or sorted(mapping) != list(range(1, len(mapping) + 1)):
            raise PermutationError(f"{mapping} is not a permutation of 1..{len(mapping)}")

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(tuple(range(1, n + 1)))

    @classmethod
    def parse(cls, text: str) -> "Permutation":
        """Parse '2,3,1' or '(2, 3, 1)'."""
        body = text.strip().strip("()")
        try:
            values = [int(tok) for tok in body.replace(" ", "").split(",") if tok]
        except ValueError as exc:
            raise PermutationError(f"cannot parse permutation {text!r}") from exc
        return cls(tuple(values))

    @property
    def n(self) -> int:
        return len(self.mapping)

    @property
    def is_identity(self) -> bool:
        return self.mapping == tuple(range(1, self.n + 1))

    def __call__(self, i: int) -> int:
        return self.mapping[i - 1]

    def inverse(self) -> "Permutation":
        inv = [0] * self.n
        for i, target in enumerate(self.mapping, start=1):
            inv[target - 1] = i
        return Permutation(tuple(inv))

    def indices(self) -> np.ndarray:
        """0-based targets, usable for fancy indexing over block axes."""
        return np.asarray(self.mapping, dtype=np.intp) - 1

    def __str__(self) -> str:
        return "(" + ",".join(str(v) for v in self.mapping) + ")"


def shift_permutation(n: int, k: int) -> Permutation:
    """
    sigma^k where sigma = (2, 3, ..., n, 1) shifts every block by one position.
    sigma^n is the identity.
    """
    if n < 1:
        raise ArgumentError(f"need n >= 1, got {n}")
    if not 1 <= k <= n:
        raise PermutationError(f"shift power k must be in 1..{n}, got {k}")
    return Permutation(tuple(((i - 1 + k) % n) + 1 for i in range(1, n + 1)))


def shift_powers(n: int) -> list[Permutation]:
    """[identity, sigma, sigma^2, ..., sigma^(n-1)] - the order used by assignment labels."""
    return [shift_permutation(n, n)] + [shift_permutation(n, k) for k in range(1, n)]


@dataclass(frozen=True)
class HeadAssignment:
    """
    Split of A attention heads over shift permutations, e.g. 10:2.

    Heads are laid out in the order of ``entries``: the first entry's heads
    take head slots 0..count-1, and so on. Zero-count entries are allowed so
    degenerate sweeps such as 12:0 can be expressed; they own no head slots.
    """
    entries: tuple[tuple[Permutation, int], ...]

    def __post_init__(self):
        entries = tuple((perm, int(count)) for perm, count in self.entries)
        object.__setattr__(self, "entries", entries)
        if not entries:
            raise ArgumentError("a head assignment needs at least one entry")

        n = entries[0][0].n
        allowed = set(shift_powers(n))
        seen = set()
        for perm, count in entries:
            if perm.n != n:
                raise ArgumentError(f"mixed block counts in assignment: {perm} vs n={n}")
            if perm not in allowed:
                raise PermutationError(f"{perm} is not a power of the one-position shift")
            if perm in seen:
                raise ArgumentError(f"permutation {perm} listed twice")
            if count < 0:
                raise ArgumentError(f"head count for {perm} is negative: {count}")
            seen.add(perm)
        if self.total_heads < 1:
            raise ArgumentError("assignment gives no heads to any permutation")

    @classmethod
    def from_counts(cls, counts: Sequence[int]) -> "HeadAssignment":
        """counts[0] heads on the identity, counts[k] on sigma^k."""
        perms = shift_powers(len(counts))
        return cls(tuple(zip(perms, counts)))

    @classmethod
    def parse(cls, label: str) -> "HeadAssignment":
        try:
            counts = [int(tok) for tok in label.strip().split(":")]
        except ValueError as exc:
            raise ArgumentError(f"cannot parse head assignment {label!r}") from exc
        return cls.from_counts(counts)

    @property
    def num_blocks(self) -> int:
        return self.entries[0][0].n

    @property
    def total_heads(self) -> int:
        return sum(count for _, count in self.entries)

    @property
    def label(self) -> str:
        return ":".join(str(count) for _, count in self.entries)

    def groups(self) -> Iterator[tuple[Permutation, int, int]]:
        """Yield (perm, first head slot, head count) for every non-empty entry."""
        start = 0
        for perm, count in self.entries:
            if count:
                yield perm, start, count
            start += count

    def head_permutations(self) -> list[Permutation]:
        return [perm for perm, count in self.entries for _ in range(count)]

    @property
    def is_all_identity(self) -> bool:
        return all(perm.is_identity for perm, _, _ in self.groups())

    def __str__(self) -> str:
        return self.label


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def enumerate_assignments(A: int, n: int) -> list[HeadAssignment]:
    """
    Every split of A heads over the n shift permutations, zero counts
    included (12:0, 11:1, ..., 0:12 for A=12, n=2).
    """
    if A < 1 or n < 1:
        raise ArgumentError(f"need A >= 1 and n >= 1, got A={A}, n={n}")
    return [HeadAssignment.from_counts(counts) for counts in _compositions(A, n)]

"""
Permutation class labels.

A puzzle class is the lexicographic (Lehmer) rank of the permutation of
the four crops, plus 24 when the tuple was flipped upside-down.
"""

from dataclasses import dataclass
from math import factorial
from typing import Sequence, Tuple

PIECES = 4
NUM_PERMUTATIONS = factorial(PIECES)


def permutation_rank(perm: Sequence[int]) -> int:
    """
    Lexicographic rank of a permutation of the four pieces (0, 1, 2, 3).

    >>> permutation_rank((1, 0, 2, 3))
    6
    """
    perm = tuple(int(p) for p in perm)
    n = len(perm)
    if n != PIECES:
        raise ValueError(f"expected a permutation of {PIECES} pieces, got {n}: {perm}")
    if sorted(perm) != list(range(n)):
        raise ValueError(f"{perm} is not a permutation of 0..{n - 1}")
    rank = 0
    remaining = list(range(n))
    for i, p in enumerate(perm):
        position = remaining.index(p)
        rank += position * factorial(n - 1 - i)
        remaining.pop(position)
    return rank


def permutation_unrank(rank: int, n: int = PIECES) -> Tuple[int, ...]:
    """Inverse of permutation_rank."""
    rank = int(rank)
    if not 0 <= rank < factorial(n):
        raise ValueError(f"rank {rank} outside [0, {factorial(n)})")
    remaining = list(range(n))
    perm = []
    for i in range(n):
        position, rank = divmod(rank, factorial(n - 1 - i))
        perm.append(remaining.pop(position))
    return tuple(perm)


def inverse_permutation(perm: Sequence[int]) -> Tuple[int, ...]:
    inverse = [0] * len(perm)
    for i, p in enumerate(perm):
        inverse[p] = i
    return tuple(inverse)


@dataclass(frozen=True)
class PuzzleLabel:
    perm_rank: int
    flipped: bool = False

    def __post_init__(self):
        if not 0 <= self.perm_rank < NUM_PERMUTATIONS:
            raise ValueError(f"perm_rank {self.perm_rank} outside [0, {NUM_PERMUTATIONS})")

    @property
    def class_id(self) -> int:
        return self.perm_rank + NUM_PERMUTATIONS * int(self.flipped)

    @property
    def permutation(self) -> Tuple[int, ...]:
        return permutation_unrank(self.perm_rank)


def label_from_class_id(class_id: int) -> PuzzleLabel:
    class_id = int(class_id)
    if not 0 <= class_id < 2 * NUM_PERMUTATIONS:
        raise ValueError(f"class id {class_id} outside [0, {2 * NUM_PERMUTATIONS})")
    flipped, rank = divmod(class_id, NUM_PERMUTATIONS)
    return PuzzleLabel(rank, bool(flipped))


def num_classes(rwc: bool) -> int:
    """48 classes with rotation-with-classification, 24 without."""
    return 2 * NUM_PERMUTATIONS if rwc else NUM_PERMUTATIONS

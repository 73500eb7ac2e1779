"""Deterministic random numbers for reproducible shuffles and fixtures.

The repository deliberately avoids platform- or library-dependent PRNGs for
anything that feeds the training pipeline: a seeded train/test split must
produce the same index sets on every machine, forever.  The generator here is
splitmix64 (Steele/Lea/Vigna), a tiny 64-bit mixer with a full-period
increment; it is trivially portable because it only needs wrapping 64-bit
integer arithmetic.
"""

from __future__ import annotations

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    """splitmix64 stream seeded with an arbitrary 64-bit integer."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        """Return the next output in [0, 2^64)."""
        self._state = (self._state + _GOLDEN_GAMMA) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        """Return an integer in [0, bound) by modulo reduction.

        Modulo bias is negligible for the small bounds used here (dataset
        sizes), and the reduction keeps replay trivial for oracle tests.
        """
        if bound <= 0:
            raise ValueError(f"bound must be positive, got {bound}")
        return self.next_u64() % bound

    def uniform(self) -> float:
        """Return a float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53


def fisher_yates(items: list, rng: SplitMix64) -> None:
    """Shuffle ``items`` in place.

    Classic high-to-low Fisher-Yates: for i = n-1 .. 1 pick j in [0, i] via
    ``rng.below(i + 1)`` and swap.  This exact loop shape is part of the
    repository's reproducibility contract; tests replay it independently.
    """
    for i in range(len(items) - 1, 0, -1):
        j = rng.below(i + 1)
        items[i], items[j] = items[j], items[i]


def shuffled_indices(n: int, seed: int) -> list[int]:
    """Return [0, n) shuffled by a fresh seeded generator."""
    indices = list(range(n))
    fisher_yates(indices, SplitMix64(seed))
    return indices

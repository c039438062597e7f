"""Deterministic random number generation shared by splitting and bootstrapping.

Everything seeded in this package draws from SplitMix64, a 64-bit
counter-based generator. Output i of a stream seeded with s is

    mix64(s + (i + 1) * 0x9E3779B97F4A7C15)

where mix64 is the SplitMix64 finalizer. The counter form means a block of
outputs can be produced in one vectorized pass and is bit-identical to
repeated single draws, so results never depend on batching or thread count.

Derived operations, fixed for reproducibility across releases:

* bounded draw: ``next_u64() % n`` (modulo; the bias is below 2**-50 for any
  n this package uses),
* shuffle: Fisher-Yates from the top, ``j = bounded(i + 1)`` for
  ``i = n-1 .. 1``.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK = (1 << 64) - 1


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a 64-bit integer."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def derive_seed(seed: int, stream: int) -> int:
    """Decorrelated sub-seed for stream ``stream`` of a master seed."""
    return mix64((seed & _MASK) ^ mix64(stream + 1))


class SplitMix64:
    """Counter-based SplitMix64 stream."""

    def __init__(self, seed: int):
        self._base = seed & _MASK
        self._count = 0

    def next_u64(self) -> int:
        self._count += 1
        return mix64(self._base + self._count * _GOLDEN)

    def next_block(self, n: int) -> np.ndarray:
        """n outputs as uint64, identical to n calls of next_u64()."""
        counts = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        z = counts * np.uint64(_GOLDEN) + np.uint64(self._base)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    def bounded(self, n: int) -> int:
        """Integer in [0, n)."""
        if n <= 0:
            raise ValueError("bound must be positive")
        return self.next_u64() % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.bounded(i + 1)
            items[i], items[j] = items[j], items[i]

    def index_block(self, n: int, count: int) -> np.ndarray:
        """count indices in [0, n), identical to count bounded(n) calls."""
        if n <= 0:
            raise ValueError("bound must be positive")
        return (self.next_block(count) % np.uint64(n)).astype(np.int64)

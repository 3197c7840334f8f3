"""Deterministic randomness built on a splitmix-style 64-bit generator.

Every run consumes a single user-visible seed; subsystem streams (parameter
init, epoch shuffling, test sampling) are derived from it with string labels
so that results are reproducible bit for bit on the same platform.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def mix64(x: int) -> int:
    """splitmix64 finalizer: a bijective avalanche mix on 64-bit integers."""
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def _fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


def derive_seed(master: int, label: str, index: int = 0) -> int:
    """Derive a labeled sub-seed from the master seed (stable across runs)."""
    return mix64(mix64(master) ^ _fnv1a64(label) ^ mix64(index + _GAMMA))


class SplitMix64:
    """Minimal splitmix64 stream; enough for init draws and shuffling."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        return mix64(self._state)

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        # 53 bits of mantissa, in [0, 1)
        u = (self.next_u64() >> 11) * (2.0**-53)
        return low + (high - low) * u

    def uniforms(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return np.array([self.uniform(low, high) for _ in range(n)], dtype=np.float64)

    def randint(self, bound: int) -> int:
        """Integer in [0, bound). Modulo bias is negligible for bound << 2**64."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return self.next_u64() % bound

    def shuffle(self, values: np.ndarray) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(values) - 1, 0, -1):
            j = self.randint(i + 1)
            values[i], values[j] = values[j], values[i]


def splitmix_keys(seed: int, n: int) -> np.ndarray:
    """Vectorized splitmix64 stream: the first n outputs for this seed."""
    state = (np.uint64(seed & _MASK64) + np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GAMMA))
    x = state
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def permutation(n: int, seed: int) -> np.ndarray:
    """Deterministic permutation of range(n): argsort of splitmix64 keys.

    Sorting random 64-bit keys gives a uniform shuffle (ties are essentially
    impossible and a stable sort makes them deterministic anyway) and runs
    at C speed, unlike an index-by-index Fisher-Yates loop.
    """
    return np.argsort(splitmix_keys(seed, n), kind="stable")

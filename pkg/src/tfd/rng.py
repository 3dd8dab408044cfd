"""Platform-independent seeded random streams.

The generator is SplitMix64 evaluated in counter mode: output ``k`` is the
xorshift-multiply finalizer applied to ``seed + k * golden_gamma``.  That is
bit-identical to the sequential SplitMix64 stream, but lets numpy draw whole
blocks at once.  Gaussians come from Box-Muller on top of the uniform stream.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _finalize(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def mix64(value: int) -> int:
    """Scalar SplitMix64 finalizer of ``value + golden``."""
    z = (value + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *indices: int) -> int:
    """Child seed for a sub-stream, e.g. one image in a dataset."""
    s = mix64(master & MASK64)
    for i in indices:
        s = mix64(s ^ (i & MASK64))
    return s


class Rng:
    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self.counter = 0

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, counter={self.counter})"

    def next_u64(self, n: int) -> np.ndarray:
        k = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            state = np.uint64(self.seed) + k * np.uint64(GOLDEN)
            return _finalize(state)

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Doubles in [low, high) from the top 53 bits of each draw."""
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return (low + (high - low) * u).reshape(shape)

    def normal(self, shape=(), mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        pairs = (n + 1) // 2
        u = self.uniform((pairs, 2))
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * math.pi * u[:, 1]
        z = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1).reshape(-1)[:n]
        return (mean + std * z).reshape(shape)

    def integers(self, high: int, shape=()) -> np.ndarray:
        return np.minimum(np.floor(self.uniform(shape) * high), high - 1).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")

    def spawn(self, *indices: int) -> "Rng":
        return Rng(derive_seed(self.seed, *indices))

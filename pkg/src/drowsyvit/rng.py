"""Deterministic random number generation.

SeededGenerator wraps the counter-based Philox-4x64 bit generator keyed by
(seed, stream). All distribution draws below are derived from the raw
64-bit word stream inside this module, so the sample sequence for a given
(seed, stream, version) is a documented contract: it does not depend on
numpy's distribution implementations and is identical across platforms.

Stream derivation for parallel work (one generator per sample, per epoch,
...) goes through derive(), which mixes the index into the stream key with
a splitmix-style multiply; derived generators never collide with their
parent for indices below 2**64.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_DERIVE_MULT = 0x9E3779B97F4A7C15  # 2**64 / golden ratio, odd
_INV_2_53 = 2.0 ** -53


class SeededGenerator:
    """Reproducible random source. Version 1 of the stream contract."""

    VERSION = 1

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._bits = np.random.Philox(key=key)

    def derive(self, index: int) -> "SeededGenerator":
        """Independent child stream for a worker / sample index."""
        if index < 0:
            raise ValueError("derive index must be nonnegative")
        child = (self.stream * _DERIVE_MULT + index + 1) & _MASK64
        return SeededGenerator(self.seed, child)

    def _raw(self, n: int) -> np.ndarray:
        return np.atleast_1d(self._bits.random_raw(n))

    def bytes(self, n: int) -> bytes:
        """n raw bytes from the word stream (little-endian words)."""
        words = self._raw((n + 7) // 8)
        return words.astype("<u8").tobytes()[:n]

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        """Uniform floats in [low, high); 53-bit mantissa resolution."""
        n = 1 if size is None else int(np.prod(size))
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        out = low + (high - low) * u
        if size is None:
            return float(out[0])
        return out.reshape(size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        """Gaussian via Box-Muller on the uniform stream."""
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        # u1 in (0, 1] so the log is finite; u2 in [0, 1)
        u1 = ((self._raw(pairs) >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53
        u2 = (self._raw(pairs) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        radius = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        z = np.concatenate([radius * np.cos(theta), radius * np.sin(theta)])[:n]
        out = loc + scale * z
        if size is None:
            return float(out[0])
        return out.reshape(size)

    def integers(self, bound: int) -> int:
        """Uniform integer in [0, bound) via unbiased rejection."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        # largest multiple of bound that fits in 64 bits
        limit = _MASK64 + 1 - ((_MASK64 + 1) % bound)
        while True:
            word = int(self._raw(1)[0])
            if word < limit:
                return word % bound

    def bernoulli(self, p: float) -> bool:
        return self.uniform() < p

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n)."""
        order = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.integers(i + 1)
            order[i], order[j] = order[j], order[i]
        return order

    def shuffle(self, items: list) -> list:
        """New list with items in permuted order; input untouched."""
        order = self.permutation(len(items))
        return [items[i] for i in order]

    def __repr__(self) -> str:
        return f"SeededGenerator(seed={self.seed}, stream={self.stream})"

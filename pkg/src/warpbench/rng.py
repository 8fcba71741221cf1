"""Deterministic random number generation.

Every stochastic operation in the toolkit draws from SplitRng, a counter-based
generator built on the SplitMix64 mixing function (Steele, Lea & Flood 2014):

    out_n = mix64(seed + (n + 1) * 0x9E3779B97F4A7C15)

The stream is a pure function of (seed, counter), so identical seeds reproduce
identical outputs on any platform, and named substreams can be split off
without consuming state from the parent.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = 0x9E3779B97F4A7C15
_MASK = 0xFFFFFFFFFFFFFFFF

_U_GOLDEN = np.uint64(_GOLDEN)
_U_M1 = np.uint64(0xBF58476D1CE4E5B9)
_U_M2 = np.uint64(0x94D049BB133111EB)
_U_30 = np.uint64(30)
_U_27 = np.uint64(27)
_U_31 = np.uint64(31)
_U_11 = np.uint64(11)


def mix64(z: int) -> int:
    """SplitMix64 finalizer: avalanching 64-bit mix of one 64-bit word."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    # uint64 arithmetic wraps mod 2^64, matching the scalar path bit for bit
    z = (z ^ (z >> _U_30)) * _U_M1
    z = (z ^ (z >> _U_27)) * _U_M2
    return z ^ (z >> _U_31)


def _hash_label(label: str) -> int:
    h = 0xCBF29CE484222325
    for b in label.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & _MASK
    return h


class SplitRng:
    """Counter-based deterministic RNG with named substreams."""

    def __init__(self, seed: int):
        self.seed = seed & _MASK
        self._n = 0

    def split(self, label: str, index: int = 0) -> "SplitRng":
        """Child stream keyed by (seed, label, index); does not touch this stream."""
        return SplitRng(mix64(self.seed ^ _hash_label(label) ^ mix64(index)))

    def next_u64(self) -> int:
        self._n += 1
        return mix64((self.seed + self._n * _GOLDEN) & _MASK)

    def _next_block(self, n: int) -> np.ndarray:
        counters = np.arange(self._n + 1, self._n + n + 1, dtype=np.uint64)
        self._n += n
        words = np.uint64(self.seed) + counters * _U_GOLDEN
        return _mix64_array(words)

    def random(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive; modulo bias is irrelevant here."""
        if hi < lo:
            raise ValueError(f"empty integer range [{lo}, {hi}]")
        return lo + self.next_u64() % (hi - lo + 1)

    def choice(self, seq):
        return seq[self.randint(0, len(seq) - 1)]

    def random_array(self, shape) -> np.ndarray:
        """Uniform [0, 1) array drawn from the same counter stream."""
        n = int(np.prod(shape))
        u = (self._next_block(n) >> _U_11).astype(np.float64) * (1.0 / (1 << 53))
        return u.reshape(shape)

    def uniform_array(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        return lo + (hi - lo) * self.random_array(shape)

    def normal(self) -> float:
        return float(self.normal_array(1)[0])

    def normal_array(self, shape, sigma: float = 1.0) -> np.ndarray:
        """Standard normals via Box-Muller on paired uniforms."""
        n = int(np.prod(shape))
        u1 = np.maximum(self.random_array(n), 1e-300)
        u2 = self.random_array(n)
        out = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return (sigma * out).reshape(shape)

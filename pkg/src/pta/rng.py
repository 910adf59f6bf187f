"""Deterministic random streams.

One named 64-bit generator (xoshiro256** seeded via splitmix64) backs every
stochastic component, so identical seeds reproduce identical numbers on any
platform and any numpy version.  Independent sub-streams are derived by
hashing (seed, path components) rather than by drawing from a parent stream,
which keeps parallel trials order-independent.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns (new_state, output word)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, (z ^ (z >> 31)) & _MASK64


def hash64(*parts) -> int:
    """Collapse arbitrary parts (ints, strings) into one 64-bit seed.

    SHA-256 over a canonical text encoding; stable across runs and platforms.
    """
    canon = "\x1f".join(f"{type(p).__name__}:{p}" for p in parts)
    digest = hashlib.sha256(canon.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Xoshiro256StarStar:
    """xoshiro256** 1.0 (Blackman & Vigna), state seeded with splitmix64.

    Pure-Python on purpose: bit-exact reproducibility matters more than raw
    throughput at the scales this package runs at.
    """

    def __init__(self, seed: int):
        seed = int(seed) & _MASK64
        self.seed = seed
        s, self._s0 = splitmix64(seed)
        s, self._s1 = splitmix64(s)
        s, self._s2 = splitmix64(s)
        _, self._s3 = splitmix64(s)
        self._spare_normal: float | None = None

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s0, self._s1, self._s2, self._s3 = s0, s1, s2, s3
        return result

    def _block_u64(self, count: int) -> np.ndarray:
        """Tight-loop batch of raw u64 words (hot path for array draws)."""
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        out = [0] * count
        for i in range(count):
            out[i] = (((((s1 * 5) & _MASK64) << 7 | ((s1 * 5) & _MASK64) >> 57) & _MASK64) * 9) & _MASK64
            t = (s1 << 17) & _MASK64
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) | (s3 >> 19)) & _MASK64
        self._s0, self._s1, self._s2, self._s3 = s0, s1, s2, s3
        return np.array(out, dtype=np.uint64)

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def _block_random(self, count: int) -> np.ndarray:
        return (self._block_u64(count) >> np.uint64(11)).astype(float) * (1.0 / (1 << 53))

    def uniform(self, low: float, high: float, size: int | None = None):
        if size is None:
            return low + (high - low) * self.random()
        return low + (high - low) * self._block_random(int(size))

    def normal(self, size: int | None = None):
        """Standard normal draws via the Box-Muller transform."""
        if size is None:
            return self._next_normal()
        size = int(size)
        pairs = (size + 1) // 2
        u = 1.0 - self._block_random(pairs)
        v = self._block_random(pairs)
        r = np.sqrt(-2.0 * np.log(u))
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(2.0 * np.pi * v)
        out[1::2] = r * np.sin(2.0 * np.pi * v)
        return out[:size]

    def _next_normal(self) -> float:
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
            return z
        # u in (0,1] so log() is finite
        u = 1.0 - self.random()
        v = self.random()
        r = math.sqrt(-2.0 * math.log(u))
        self._spare_normal = r * math.sin(2.0 * math.pi * v)
        return r * math.cos(2.0 * math.pi * v)

    def integer_below(self, n: int) -> int:
        """Uniform integer in [0, n) without modulo bias."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (_MASK64 + 1) - ((_MASK64 + 1) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def choice_sign(self) -> float:
        return 1.0 if (self.next_u64() >> 63) else -1.0

    def shuffle(self, items: list) -> None:
        """Fisher-Yates shuffle, in place."""
        for i in range(len(items) - 1, 0, -1):
            j = self.integer_below(i + 1)
            items[i], items[j] = items[j], items[i]


def stream(master_seed: int, *path) -> Xoshiro256StarStar:
    """Independent generator for (master_seed, *path), e.g. ("trial", 3)."""
    return Xoshiro256StarStar(hash64(int(master_seed) & _MASK64, *path))

"""Portable 64-bit pseudo-random generator.

All randomness in the package (parameter initialization, mini-batch shuffling,
scenario perturbations) flows through :class:`Xoshiro256`, a xoshiro256**
shift-register generator whose state is expanded from a single 64-bit seed with
SplitMix64.  Both algorithms are fully specified by their public reference
implementations, so the streams can be reproduced bit-for-bit in any language.
"""

from __future__ import annotations

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class SplitMix64:
    """SplitMix64 (Steele, Lea & Flood); used for seeding."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)


class Xoshiro256:
    """xoshiro256** 1.0 with SplitMix64 state expansion.

    >>> rng = Xoshiro256(42)
    >>> 0.0 <= rng.random() < 1.0
    True
    """

    def __init__(self, seed: int):
        sm = SplitMix64(seed)
        self.s = [sm.next() for _ in range(4)]

    @classmethod
    def from_state(cls, state) -> "Xoshiro256":
        """Generator with an explicit 4-word state (must not be all zero)."""
        words = [int(w) & MASK64 for w in state]
        if len(words) != 4 or not any(words):
            raise ValueError("state must be four words, not all zero")
        g = cls.__new__(cls)
        g.s = words
        return g

    def next_u64(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) via modulo rejection."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def uniform_array(self, shape, low: float, high: float) -> np.ndarray:
        size = int(np.prod(shape, dtype=np.int64))
        vals = np.fromiter((self.random() for _ in range(size)), dtype=np.float64, count=size)
        return (low + (high - low) * vals).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randbelow(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return np.asarray(perm, dtype=np.int64)

    def spawn(self, stream: int) -> "Xoshiro256":
        """Independent child generator keyed by ``stream``."""
        return Xoshiro256(self.next_u64() ^ ((stream * 0x9E3779B97F4A7C15) & MASK64))

"""Deterministic seeding: a 64-bit split-mix sequence plus named sub-streams.

Every piece of randomness in the toolkit flows from an explicit 64-bit seed.
Template offsets use the split-mix sequence directly so per-user templates can
be regenerated from their seed alone; everything else draws from NumPy
generators keyed by (master seed, stream name) so batch order never affects
per-item output.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """The named 64-bit split-mix generator used for template region offsets."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_int(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi], inclusive."""
        if hi < lo:
            raise ValueError("empty range")
        return lo + self.next_u64() % (hi - lo + 1)


def derive_seed(master: int, *names: object) -> int:
    """Stable 64-bit sub-seed for a named stream under a master seed."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(master & _MASK64).encode())
    for name in names:
        h.update(b"/")
        h.update(str(name).encode())
    return int.from_bytes(h.digest(), "little")


def generator(master: int, *names: object) -> np.random.Generator:
    """NumPy generator on a named sub-stream of a master seed."""
    seed = derive_seed(master, *names) if names else master & _MASK64
    return np.random.default_rng(seed)

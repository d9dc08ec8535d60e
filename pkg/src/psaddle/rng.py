"""Seeded splitmix64 generator used for reproducible experiment randomness.

The CLI promises byte-identical CSV output for a fixed config and seed, so
experiment-level randomness must not depend on numpy's generator internals.
This is the plain splitmix64 recurrence: state advances by the golden-ratio
increment, outputs are finalized with two xor-shift multiplies.
"""

from __future__ import annotations

import math

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    """Deterministic 64-bit generator with uniform and normal draws."""

    def __init__(self, seed: int):
        self._state = seed & _MASK
        self._spare_normal = None

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        # 53-bit mantissa in [0, 1)
        u = (self.next_u64() >> 11) * (1.0 / (1 << 53))
        return lo + (hi - lo) * u

    def normal(self) -> float:
        # Box-Muller; caches the second variate
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
            return z
        u1 = 1.0 - self.uniform()  # avoid log(0)
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare_normal = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def normal_vector(self, n: int):
        import numpy as np

        return np.array([self.normal() for _ in range(n)])

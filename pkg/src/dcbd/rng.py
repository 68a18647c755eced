"""Counter-based deterministic random generator.

Every draw is a pure function of (key, counter), so sampling order never
affects values and independent streams can be split off by label. This keeps
batched training runs bit-reproducible regardless of evaluation order.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15  # splitmix64 increment


def _mix(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK
    return z ^ (z >> 31)


def _hash_label(label) -> int:
    h = 0xCBF29CE484222325  # FNV-1a over the label's repr bytes
    for b in repr(label).encode():
        h = ((h ^ b) * 0x100000001B3) & _MASK
    return h


class Rng:
    """Splittable counter-based generator over 53-bit doubles."""

    def __init__(self, seed: int):
        self._key = _mix(int(seed) & _MASK)
        self._counter = 0

    def stream(self, label) -> "Rng":
        """Derive an independent child generator keyed by `label`."""
        child = Rng.__new__(Rng)
        child._key = _mix(self._key ^ _hash_label(label))
        child._counter = 0
        return child

    def _next_u64(self) -> int:
        self._counter += 1
        return _mix((self._key + self._counter * _GAMMA) & _MASK)

    def uniform(self, lo: float = 0.0, hi: float = 1.0, shape=()) -> np.ndarray:
        """Uniform draws in [lo, hi)."""
        n = int(np.prod(shape)) if shape else 1
        vals = [(self._next_u64() >> 11) * 2.0**-53 for _ in range(n)]
        out = np.array(vals, dtype=np.float64) * (hi - lo) + lo
        return out.reshape(shape) if shape else out[0]

    def normal(self, shape=()) -> np.ndarray:
        """Standard normal draws (Box-Muller)."""
        n = int(np.prod(shape)) if shape else 1
        vals = []
        while len(vals) < n:
            u1 = max((self._next_u64() >> 11) * 2.0**-53, 2.0**-53)
            u2 = (self._next_u64() >> 11) * 2.0**-53
            r = math.sqrt(-2.0 * math.log(u1))
            vals.append(r * math.cos(2.0 * math.pi * u2))
            vals.append(r * math.sin(2.0 * math.pi * u2))
        out = np.array(vals[:n], dtype=np.float64)
        return out.reshape(shape) if shape else out[0]

    def at(self, index: int) -> "Rng":
        """Random-access child for element `index` (batch-order independence)."""
        return self.stream(("idx", int(index)))

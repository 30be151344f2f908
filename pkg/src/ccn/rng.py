"""Counter-based pseudo-random generator (splitmix64).

Every stochastic feature in the library (init, dropout, corruption, batch
order) draws from this generator rather than numpy's, so that a given seed
produces the same bit stream on every platform and numpy version. The
generator is a pure 64-bit integer hash of seed and draw counter, which also
makes array draws vectorizable.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)


def _mix(x: np.ndarray | np.uint64) -> np.ndarray | np.uint64:
    # splitmix64 finalizer; works elementwise on uint64 arrays (mod-2^64 wrap intended)
    with np.errstate(over="ignore"):
        x = (x ^ (x >> np.uint64(30))) * _MIX1
        x = (x ^ (x >> np.uint64(27))) * _MIX2
        return x ^ (x >> np.uint64(31))


def _hash_tag(tag) -> np.uint64:
    """FNV-1a over the repr bytes of a fork tag (int, str, or tuple of those)."""
    h = _FNV_OFFSET
    with np.errstate(over="ignore"):
        for b in repr(tag).encode("utf-8"):
            h = (h ^ np.uint64(b)) * _FNV_PRIME
    return h


class Rng:
    """Deterministic stream of draws identified by (seed, stream)."""

    def __init__(self, seed: int, stream: int | np.uint64 = 0):
        self.seed = int(seed)
        self._base = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ np.uint64(stream))
        self._counter = np.uint64(0)

    def fork(self, tag) -> "Rng":
        """Independent child stream; same (seed, tag) always yields the same child."""
        return Rng(self.seed, stream=_mix(self._base ^ _hash_tag(tag)))

    def _raw(self, n: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            idx = self._counter + np.arange(1, n + 1, dtype=np.uint64)
            self._counter += np.uint64(n)
            return _mix(self._base + idx * _GOLDEN)

    def uniform(self, shape=None) -> float | np.ndarray:
        """Uniform float64 draws in [0, 1)."""
        if shape is None:
            return float((self._raw(1) >> np.uint64(11))[0]) * 2.0**-53
        n = int(np.prod(shape))
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return u.reshape(shape)

    def uniform_range(self, lo: float, hi: float, shape=None):
        return lo + (hi - lo) * self.uniform(shape)

    def integer(self, bound: int) -> int:
        """One integer in [0, bound). Uses rejection-free scaled draw (bound << 2^53)."""
        if bound <= 0:
            raise ValueError(f"integer bound must be positive, got {bound}")
        return int(self.uniform() * bound)

    def integers(self, bound: int, shape) -> np.ndarray:
        if bound <= 0:
            raise ValueError(f"integer bound must be positive, got {bound}")
        return (self.uniform(shape) * bound).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n)."""
        out = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.integer(i + 1)
            out[i], out[j] = out[j], out[i]
        return out

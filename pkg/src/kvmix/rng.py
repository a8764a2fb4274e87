"""Counter-based SplitMix64 random stream.

Output ``i`` of a stream seeded with ``s`` is ``mix(s + (i + 1) * GAMMA)``
(all arithmetic mod 2**64), so any block of the stream can be produced with
vectorised numpy integer ops. Uniforms take the top 53 bits; normals use the
Box-Muller transform on consecutive uniform pairs. The construction is simple
enough to be reimplemented bit-for-bit in any language.
"""

from __future__ import annotations

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def mix64(x: int) -> int:
    """SplitMix64 finaliser applied to a single integer."""
    with np.errstate(over="ignore"):
        return int(_mix(np.array([x & _MASK64], dtype=np.uint64))[0])


def child_seed(seed: int, *path: int) -> int:
    """Derive an independent 64-bit seed from ``seed`` and an index path."""
    s = seed & _MASK64
    for index in path:
        s = mix64((s + (index + 1) * int(GAMMA)) & _MASK64)
    return s


class SplitMix64:
    """Sequential view of the counter-based stream; every draw advances it."""

    def __init__(self, seed: int = 0):
        if seed < 0:
            raise ValueError("seed must be a non-negative 64-bit integer")
        self.seed = seed & _MASK64
        self.counter = 0

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix(np.uint64(self.seed) + idx * GAMMA)

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1)."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, shape) -> np.ndarray:
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        # 1 - u keeps the log argument in (0, 1]
        radius = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.empty((pairs, 2))
        z[:, 0] = radius * np.cos(theta)
        z[:, 1] = radius * np.sin(theta)
        return z.reshape(-1)[:n].reshape(shape)

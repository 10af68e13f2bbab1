"""Portable pseudo-random streams.

Randomized sweeps use xorshift64* so that a seed reproduces the same
numbers in any implementation. One generator holds ``lanes`` independent
64-bit states advanced in lock-step; each lane is seeded from successive
outputs of splitmix64 applied to the user seed.

Update of a single lane (all arithmetic modulo 2**64)::

    x ^= x >> 12
    x ^= x << 25
    x ^= x >> 27
    out = x * 0x2545F4914F6CDD1D

Uniform doubles are ``(out >> 11) * 2**-53``. Draws are emitted round-robin
across lanes: a block of ``m`` draws takes ``ceil(m / lanes)`` steps and
reads the lane outputs row by row. Normal variates use Box-Muller on
consecutive uniform pairs ``(u1, u2)`` with ``u1`` mapped to ``1 - u1``.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_MULT = np.uint64(0x2545F4914F6CDD1D)


def splitmix64(seed: int, count: int) -> list[int]:
    """First ``count`` outputs of splitmix64 started at ``seed``."""
    out = []
    z = seed & _MASK
    for _ in range(count):
        z = (z + 0x9E3779B97F4A7C15) & _MASK
        r = z
        r = ((r ^ (r >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        r = ((r ^ (r >> 27)) * 0x94D049BB133111EB) & _MASK
        r ^= r >> 31
        out.append(r or 0x9E3779B97F4A7C15)  # xorshift state must be nonzero
    return out


class Xorshift64Star:
    """Lock-step bank of xorshift64* generators."""

    def __init__(self, seed: int = 0, lanes: int = 64):
        if lanes < 1:
            raise ValueError("lanes must be >= 1")
        self.seed = int(seed)
        self.lanes = lanes
        self._state = np.array(splitmix64(self.seed, lanes), dtype=np.uint64)

    def _step(self) -> np.ndarray:
        x = self._state
        x ^= x >> np.uint64(12)
        x ^= x << np.uint64(25)
        x ^= x >> np.uint64(27)
        self._state = x
        return x * _MULT

    def next_u64(self, count: int) -> np.ndarray:
        steps = -(-count // self.lanes)
        block = np.empty((steps, self.lanes), dtype=np.uint64)
        with np.errstate(over="ignore"):
            for i in range(steps):
                block[i] = self._step()
        return block.reshape(-1)[:count]

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        shape = () if size is None else np.atleast_1d(size)
        count = int(np.prod(shape)) if size is not None else 1
        u = (self.next_u64(count) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        u = low + (high - low) * u
        return u.reshape(tuple(shape)) if size is not None else float(u[0])

    def normal(self, size=None) -> np.ndarray:
        shape = () if size is None else tuple(np.atleast_1d(size))
        count = int(np.prod(shape)) if size is not None else 1
        pairs = -(-count // 2)
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
        angle = 2.0 * np.pi * u[:, 1]
        z = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1).reshape(-1)[:count]
        return z.reshape(shape) if size is not None else float(z[0])

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        """Uniform integers in ``[low, high)`` by multiply-shift on the top 53 bits."""
        u = self.uniform(size)
        return (low + np.floor(u * (high - low))).astype(np.int64)

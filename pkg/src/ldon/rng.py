"""Deterministic random streams on a counter-based engine.

Every stochastic component in the package draws from :class:`Rng`. Streams are
keyed by ``(seed, stream)`` so independent consumers (per-sample field draws,
per-layer initializers, per-epoch shuffles) can be replayed in any order
without sharing state.
"""
from __future__ import annotations

import numpy as np

_TWO_PI = 2.0 * np.pi


class Rng:
    """Philox-keyed random stream with hand-rolled Box-Muller normals.

    Parameters
    ----------
    seed : int
        Non-negative base seed.
    stream : int
        Non-negative substream index. Distinct ``(seed, stream)`` pairs give
        statistically independent streams.
    """

    def __init__(self, seed: int, stream: int = 0):
        if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool):
            raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
        if not isinstance(stream, (int, np.integer)) or isinstance(stream, bool):
            raise TypeError(f"stream must be an integer, got {type(stream).__name__}")
        if seed < 0 or stream < 0:
            raise ValueError(f"seed and stream must be non-negative, got ({seed}, {stream})")
        self.seed = int(seed)
        self.stream = int(stream)
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        """Uniform draws on [low, high)."""
        if high <= low:
            raise ValueError(f"empty uniform support [{low}, {high})")
        u = self._gen.random(size)
        return low + (high - low) * u

    def normal(self, size=None):
        """Standard normal draws via the Box-Muller transform.

        Consumes uniforms in pairs; u1 is reflected to (0, 1] so the log is
        always finite.
        """
        shape = () if size is None else tuple(np.atleast_1d(size).astype(int))
        n = int(np.prod(shape)) if shape else 1
        half = (n + 1) // 2
        u1 = 1.0 - self._gen.random(half)
        u2 = self._gen.random(half)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(_TWO_PI * u2), r * np.sin(_TWO_PI * u2)])[:n]
        if size is None:
            return float(z[0])
        return z.reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Random permutation of range(n); used for epoch shuffles."""
        return self._gen.permutation(n)

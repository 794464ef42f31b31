"""Counter-based random streams.

Each ``Rng`` is a Philox stream keyed by (seed, stream). Identical
(seed, stream) plus an identical call sequence reproduces the exact same
draws, and independent streams never overlap, so env, agent, and data
sampling can each own a stream derived from one master seed.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


class Rng:
    """Reproducible random stream: ``Rng(seed, stream)``."""

    def __init__(self, seed, stream=0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        self._gen = np.random.Generator(np.random.Philox(key=[self.seed, self.stream]))

    def child(self, k):
        """Derive an independent substream; deterministic in (self, k)."""
        return Rng(self.seed, (self.stream * 1000003 + int(k) + 1) & _MASK64)

    def normal(self, shape=None, dtype=np.float32):
        # draws are computed in f64 then cast, so f32/f64 streams agree
        return self._gen.standard_normal(size=shape).astype(dtype, copy=False)

    def uniform(self, low=0.0, high=1.0, shape=None, dtype=np.float32):
        return self._gen.uniform(low, high, size=shape).astype(dtype, copy=False)

    def integers(self, low, high=None, shape=None):
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, n, size, replace=False):
        return self._gen.choice(n, size=size, replace=replace)

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream})"

"""Deterministic random streams.

All randomness in the toolkit flows through :class:`RngStream`, which wraps
numpy's Philox 4x64 counter-based bit generator.  Philox is fully specified
by its key/counter algorithm, so equal seeds produce bitwise-equal sample
sequences on every platform.  Sub-streams are derived with
``SeedSequence.spawn``, whose children are guaranteed non-overlapping.
"""
from __future__ import annotations

import numpy as np


class RngStream:
    """A seeded, splittable random stream (Philox counter-based generator)."""

    def __init__(self, seed: int | None = None, *, _seq: np.random.SeedSequence | None = None):
        if _seq is None:
            if seed is None:
                raise ValueError("RngStream requires an explicit seed")
            _seq = np.random.SeedSequence(int(seed))
        self.seed = seed
        self._seq = _seq
        self._gen = np.random.Generator(np.random.Philox(_seq))

    def split(self, n: int) -> list["RngStream"]:
        """Derive n independent child streams; children never overlap."""
        return [RngStream(_seq=child) for child in self._seq.spawn(n)]

    def standard_normal(self, shape=None) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low=0.0, high=1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed!r})"

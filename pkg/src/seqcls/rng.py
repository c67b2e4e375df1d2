"""Deterministic random streams.

All stochastic pieces of the library (weight initialization, dropout
masks, data shuffles, span masking) draw from a :class:`RandomSource`,
a seeded stream backed by numpy's counter-based Philox generator.  The
same seed replays the same value stream on every run and platform,
which is what makes checkpoints and results rows byte-reproducible.

Independent substreams are derived by hashing the parent seed together
with a string tag, so e.g. the dropout stream never shifts when the
initialization stream consumes a different number of draws.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _hash_seed(seed: int, tag: str) -> int:
    digest = hashlib.blake2b(
        f"{seed}:{tag}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


class RandomSource:
    """A named, seeded stream of random values (Philox counter-based)."""

    algorithm = "philox4x64"

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def derive(self, tag: str) -> "RandomSource":
        """Independent substream keyed by ``tag``; deterministic in (seed, tag)."""
        return RandomSource(_hash_seed(self.seed, tag))

    def uniform(self, low: float, high: float, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def bernoulli(self, p: float, shape=None) -> np.ndarray:
        """0/1 array with P(1) = p."""
        return (self._gen.random(size=shape) < p).astype(np.float64)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def geometric(self, p: float) -> int:
        """Number of trials to first success; mean 1/p."""
        return int(self._gen.geometric(p))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def shuffle(self, items: list) -> list:
        """Return a shuffled copy; the input list is left untouched."""
        order = self._gen.permutation(len(items))
        return [items[i] for i in order]

    def __repr__(self) -> str:
        return f"RandomSource(seed={self.seed}, algorithm={self.algorithm!r})"

"""Deterministic, splittable random source.

All randomness in the package flows through Rng so that every run is a pure
function of its seeds.  Rng wraps numpy's Philox counter generator behind a
SeedSequence, which gives cheap, collision-free splitting: each child stream
is statistically independent of its siblings and of the parent's later draws.

Determinism is promised within this implementation only (same code, same
seeds, same draw order), not across libraries or numpy versions.
"""

from __future__ import annotations

import numpy as np


class Rng:
    """Seeded random stream with spawn-style splitting."""

    def __init__(self, seed: int, _ss: np.random.SeedSequence | None = None):
        self.seed = int(seed)
        self._ss = _ss if _ss is not None else np.random.SeedSequence(self.seed)
        self._gen = np.random.Generator(np.random.Philox(self._ss))

    def split(self, n: int) -> list["Rng"]:
        """Return n independent child streams.

        Splitting advances only the spawn counter, never the draw state, so
        draws made before and after a split are unaffected by it.
        """
        return [Rng(self.seed, _ss=child) for child in self._ss.spawn(int(n))]

    def normal(self, mean: float, std: float, shape) -> np.ndarray:
        return self._gen.normal(mean, std, size=tuple(shape)).astype(np.float64)

    def uniform(self, low: float, high: float, shape=()) -> np.ndarray | float:
        out = self._gen.uniform(low, high, size=tuple(shape) if shape != () else None)
        return out if shape != () else float(out)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray | int:
        """Uniform integers in [low, high)."""
        out = self._gen.integers(low, high, size=tuple(shape) if shape != () else None)
        return out if shape != () else int(out)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(int(n))

    def choice(self, n: int, k: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(int(n), size=int(k), replace=replace)

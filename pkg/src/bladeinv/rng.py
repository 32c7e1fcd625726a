"""Keyed random streams.

Every random draw in a run comes from a Philox stream addressed by a tuple
``(seed, stage, *indices)``, so a draw never depends on how many numbers were
consumed before it. Particle ``j`` always reads row ``j`` of its substep's
block.
"""

from __future__ import annotations

import numpy as np

# stage tags
INIT = 0
RESAMPLE = 1
LIKELIHOOD = 2
PRIOR = 3
INSTANCE = 4
EKS = 5
METRICS = 6
ORACLE = 7


class Streams:
    """A node in a tree of counter-based random streams."""

    __slots__ = ("seed", "path")

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)

    def child(self, *key: int) -> "Streams":
        return Streams(self.seed, self.path + tuple(int(k) for k in key))

    def generator(self, *key: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path + tuple(int(k) for k in key))
        return np.random.Generator(np.random.Philox(ss))

    def __repr__(self) -> str:
        return f"Streams(seed={self.seed}, path={self.path})"


def as_streams(rng: "Streams | int | None") -> Streams:
    if isinstance(rng, Streams):
        return rng
    if rng is None:
        return Streams(np.random.SeedSequence().entropy % (2**63))
    return Streams(int(rng))


def as_generator(rng: "np.random.Generator | Streams | int | None") -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, Streams):
        return rng.generator()
    return np.random.default_rng(rng)

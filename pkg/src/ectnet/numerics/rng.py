"""Seeded random streams.

All randomness goes through :class:`Rng`, a thin wrapper over numpy's PCG64
bit generator seeded by ``SeedSequence``. Both are specified bit-for-bit and
platform independent, so a given (seed, stream name) reproduces the same
sequence everywhere.
"""
from __future__ import annotations

import zlib

import numpy as np


class Rng:
    algorithm = "PCG64"

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        self.seed = int(seed) & 0xFFFF_FFFF_FFFF_FFFF
        self.key = tuple(key)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def stream(self, name: str) -> "Rng":
        """Independent child stream; toggling one stream never perturbs another."""
        return Rng(self.seed, self.key + (zlib.crc32(name.encode("utf-8")),))

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def choice(self, a, size=None, replace=True):
        return self.generator.choice(a, size=size, replace=replace)

    def get_state(self) -> dict:
        return self.generator.bit_generator.state

    def set_state(self, state: dict) -> None:
        self.generator.bit_generator.state = state

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, key={self.key})"


def as_rng(rng: "Rng | int | None", default_seed: int = 0) -> Rng:
    if isinstance(rng, Rng):
        return rng
    return Rng(default_seed if rng is None else int(rng))

"""Deterministic RNG substreams.

Every random draw in an experiment comes from a generator keyed by
``(root seed, purpose, index...)``, so reordering components or changing
the worker-pool size never changes results.
"""

from __future__ import annotations

import zlib

import numpy as np


def _purpose_key(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def substream(seed: int, purpose: str, *index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_purpose_key(purpose), *map(int, index)))
    return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)

"""Seeded, splittable random streams.

Every stochastic routine takes an explicit integer seed (or a Generator derived
from one). Child streams come from ``numpy.random.SeedSequence.spawn`` so that a
parallel split yields the same draws as the sequential reference path.
"""

from __future__ import annotations

import os

import numpy as np

SEED_ENV = "IRLAB_SEED"


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed) & (2**64 - 1))))


def spawn(seed: int, n: int) -> list[np.random.Generator]:
    """``n`` independent generators split from one master seed."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1))
    return [np.random.Generator(np.random.PCG64(child)) for child in ss.spawn(n)]


def default_seed() -> int | None:
    value = os.environ.get(SEED_ENV)
    return int(value) if value not in (None, "") else None

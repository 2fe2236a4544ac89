"""Seeded, splittable random streams.

Every stochastic component draws from a Philox stream keyed by
``(seed, *path)``, so stages can be re-run or tested in isolation and still
see the same numbers.
"""

from __future__ import annotations

import numpy as np

SIMULATE = 1
CENSUS = 2
SAMPLE = 3
SAMPLER = 4
PPC = 5
PREDICT = 6
EXPERIMENT = 7


def stream(seed: int, *path: int) -> np.random.Generator:
    if seed is None:
        raise ValueError("an explicit seed is required")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))

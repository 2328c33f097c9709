"""Deterministic RNG streams: one independent child generator per purpose.

Every stochastic stage draws from its own SeedSequence child so adding or
removing one stage never shifts the draws of another.
"""

from __future__ import annotations

import numpy as np

PLACEMENT = 0
SHADOWING = 1
CHANNEL = 2
MONTECARLO = 3
BASELINE = 4


def stream(seed: int, *key: int) -> np.random.Generator:
    """Child generator for (seed, key); same arguments give the same stream."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))

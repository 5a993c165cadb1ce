"""Splittable, reproducible random streams.

Every randomized routine takes a 64-bit master seed.  Independent replicas
derive child streams through ``numpy.random.SeedSequence`` spawn keys, so the
stream of replica i never depends on how many replicas run or in what order.
"""

from __future__ import annotations

import numpy as np


def seed_sequence(master, *path):
    """SeedSequence for a master seed and a tuple of child indices."""
    if master < 0:
        raise ValueError("seed must be a nonnegative integer")
    return np.random.SeedSequence(entropy=int(master), spawn_key=tuple(int(p) for p in path))


def rng_for(master, *path):
    """Generator seeded deterministically from (master, path)."""
    return np.random.default_rng(seed_sequence(master, *path))


def child_seed(master, *path):
    """A derived 64-bit integer seed, e.g. for labeling replica fields."""
    return int(seed_sequence(master, *path).generate_state(2, dtype=np.uint64)[0])

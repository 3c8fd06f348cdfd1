"""Seeded random generators.

All randomness goes through numpy's PCG64 bit generator (a 128-bit-state
permuted congruential generator with 64-bit output). Generators are keyed by
a tuple of non-negative integers through ``numpy.random.SeedSequence``, which
gives independent, platform-stable streams for every (seed, slot, episode,
...) combination, e.g. ``make_rng(seed, slot)`` for the Random placer.
"""

from typing import Iterable

import numpy as np


def make_rng(*keys: int) -> np.random.Generator:
    """Create a PCG64 generator from one or more integer keys."""
    if not keys:
        raise ValueError("make_rng requires at least one key")
    entropy = [int(k) & 0xFFFFFFFFFFFFFFFF for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def stable_choice(rng: np.random.Generator, items: Iterable):
    """Uniform choice that keeps the caller's item order (no numpy coercion)."""
    pool = list(items)
    if not pool:
        raise ValueError("stable_choice on an empty sequence")
    return pool[int(rng.integers(len(pool)))]

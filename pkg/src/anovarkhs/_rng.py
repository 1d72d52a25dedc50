"""Seeded, splittable random streams.

Every stream is ``PCG64`` seeded from ``SeedSequence(seed, spawn_key=(stream,))``
so replicate ``k`` of a run always gets the same independent generator no
matter how replicates are scheduled.
"""
from __future__ import annotations

import numpy as np

RNG_ALGORITHM = "numpy.PCG64+SeedSequence(spawn_key=stream)"


def make_generator(seed: int, stream=0) -> np.random.Generator:
    """Generator for ``stream`` (an int or a tuple of ints) under ``seed``."""
    key = tuple(int(s) for s in stream) if isinstance(stream, (tuple, list)) else (int(stream),)
    seq = np.random.SeedSequence(int(seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(seq))

"""Named, splittable random streams.

Every source of randomness (locations, partitions, noise, treatments, ...)
gets its own stream derived from ``(seed, purpose, *key)``, so changing the
number of draws for one purpose never shifts the others.
"""

import numpy as np

PURPOSES = ("locations", "partition", "noise", "treatment", "decay")


def stream(seed, purpose, *key):
    """Return a ``numpy.random.Generator`` for ``purpose`` under ``seed``.

    ``key`` is an optional tuple of non-negative ints (e.g. a replication
    index) that further separates streams.
    """
    if purpose not in PURPOSES:
        raise ValueError(f"unknown rng purpose {purpose!r}")
    spawn_key = (PURPOSES.index(purpose),) + tuple(int(k) for k in key)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=spawn_key)))


def as_generator(seed_or_rng, purpose="treatment"):
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return stream(seed_or_rng, purpose)

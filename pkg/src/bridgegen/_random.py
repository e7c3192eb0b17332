"""Reproducible random streams.

Every stream is a :class:`numpy.random.Philox` generator (a counter-based
4x64 bit generator) keyed by a :class:`numpy.random.SeedSequence` built from
an integer seed plus an optional spawn key. Streams derived from the same
``(seed, *key)`` are identical on every platform, and distinct keys give
statistically independent streams, so per-chain or per-stage streams never
depend on execution order.
"""

import numpy as np

SEED_MASK = (1 << 64) - 1


def make_rng(seed, *key):
    """Return a Philox generator for ``seed`` and the integer spawn ``key``."""
    seed = int(seed) & SEED_MASK
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed, *key):
    """Derive a 64-bit integer seed from ``seed`` and a spawn key."""
    seed = int(seed) & SEED_MASK
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])

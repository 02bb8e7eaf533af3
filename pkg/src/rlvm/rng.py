"""Seeded random streams.

Every stochastic component draws from a :class:`numpy.random.Generator`
backed by PCG64 (the 128-bit permuted congruential generator, XSL-RR
output). Streams are derived from an integer seed plus zero or more
integer keys through :class:`numpy.random.SeedSequence`, so independent
sub-streams (one per slot, per rollout, per training seed) never overlap
and can be recreated from their keys alone.
"""

import numpy as np


def make_rng(seed, *keys):
    """Return a PCG64-backed generator for ``(seed, *keys)``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) & 0xFFFFFFFFFFFFFFFF for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

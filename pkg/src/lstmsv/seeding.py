"""Deterministic substream derivation from a single root seed.

Every stochastic component of the library (chain, per-run / per-sample
importance evaluations, forecast propagation, simulators) draws from a
``numpy.random.Generator`` keyed by ``(seed, stream name, indices...)``.
Substreams are independent of execution order and worker count, so
parallel runs reproduce the serial results bit for bit.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed, name, *indices):
    """Generator for the substream ``name`` (plus optional integer indices)."""
    if seed is None:
        seed = 0
    tag = zlib.crc32(name.encode("utf-8"))
    entropy = [int(seed), tag] + [int(i) for i in indices]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def as_generator(seed_or_rng):
    """Pass through a Generator, or build one from a seed (None allowed)."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)

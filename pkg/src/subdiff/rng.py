"""Counter-based random streams.

Every stream is a Philox generator keyed by ``(seed, *key)``.  Two calls
with the same key give bit-identical draws no matter which process or in
which order they run, which is what makes Monte Carlo results independent
of the worker count.
"""
from __future__ import annotations

import zlib

import numpy as np


def key_of(name: str) -> int:
    """Stable 32-bit integer id for a string label."""
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return the generator for ``(seed, *key)``.

    ``seed`` is any non-negative integer (64-bit in practice); ``key`` is a
    tuple of non-negative integers such as ``(experiment_id, block)``.
    """
    if seed < 0 or any(k < 0 for k in key):
        raise ValueError("seed and key entries must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, an int seed or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)

"""Keyed random streams.

Every consumer of randomness asks for a stream by ``(seed, purpose, *index)``.
Streams are Philox generators (counter-based), so two different keys never
share state and replicate ``r`` of a Monte Carlo run draws the same numbers
no matter which process computes it.
"""
from __future__ import annotations

import zlib

import numpy as np

SEED_MAX = 2**64 - 1


def _tag(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(seed: int, purpose: str, *index: int) -> np.random.Generator:
    """Independent generator for ``purpose`` (and optional integer indices)."""
    if not 0 <= int(seed) <= SEED_MAX:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(_tag(purpose), *map(int, index)))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, purpose: str, *index: int) -> int:
    """A 64-bit child seed, for handing to APIs that take a seed rather than a generator."""
    return int(stream(seed, purpose, *index).integers(0, SEED_MAX, dtype=np.uint64, endpoint=True))

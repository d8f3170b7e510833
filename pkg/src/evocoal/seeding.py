"""Deterministic expansion of one master seed into named random streams.

A stream is identified by ``(purpose, index)``. The purpose string is hashed
with CRC-32 so the key is stable across Python versions and processes (unlike
``hash``), and the pair is used as the ``spawn_key`` of a numpy
``SeedSequence``. Streams for different replicates are therefore independent
and the mapping does not depend on scheduling order.
"""

from __future__ import annotations

import zlib

import numpy as np

MASK64 = (1 << 64) - 1


def purpose_key(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def seed_sequence(seed: int, purpose: str, index: int = 0) -> np.random.SeedSequence:
    if index < 0:
        raise ValueError(f"replicate index must be non-negative, got {index}")
    return np.random.SeedSequence(seed & MASK64, spawn_key=(purpose_key(purpose), index))


def stream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Return the generator for ``(purpose, index)`` under master ``seed``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, purpose, index)))

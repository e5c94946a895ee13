"""Seeded RNG streams.

Streams are derived from (seed, stream id) via SeedSequence so parallel
stages never share generator state. Identical (seed, ids) give bit-identical
draw sequences on every platform (PCG64 is counter-based internally).
"""

from __future__ import annotations

import zlib

import numpy as np


def _as_key(x) -> int:
    if isinstance(x, str):
        return zlib.crc32(x.encode())
    return int(x)


def stream(seed: int, *ids) -> np.random.Generator:
    """Independent generator for the given seed and stream-id path.

    ids may be ints or short strings (stage names); strings are mapped
    to stable integers with crc32.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_as_key(i) for i in ids))
    return np.random.Generator(np.random.PCG64(ss))


def gauss(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normal draws, float64."""
    return rng.standard_normal(size=shape, dtype=np.float64)

"""Seed-stream helpers.

Every source of randomness in the package derives from one root seed plus a
tuple of stream keys (strings or ints), so independent components never share
or collide on streams and runs are reproducible end to end.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    return zlib.crc32(str(key).encode("utf-8"))


def rng_from(seed: int, *keys) -> np.random.Generator:
    """Generator for the sub-stream named by keys under the given root seed."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key_to_int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))

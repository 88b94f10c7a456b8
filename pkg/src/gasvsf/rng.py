"""Named random sub-streams derived from one 64-bit seed."""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str, *index: int) -> np.random.Generator:
    """Independent generator for (seed, name, index...).

    The name is hashed with crc32 so sub-streams are stable across runs and
    Python versions.
    """
    key = (zlib.crc32(name.encode("utf-8")),) + tuple(int(i) for i in index)
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))

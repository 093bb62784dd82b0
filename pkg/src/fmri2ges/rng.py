"""Named, seed-derived random streams. No module-level RNG state anywhere."""
from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed, *names) -> np.random.Generator:
    """Independent generator for ``(seed, *names)``.

    The same seed and names always give the same stream; different names give
    statistically independent streams.
    """
    if isinstance(seed, np.random.Generator):
        raise TypeError("pass an integer seed, not a Generator")
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(n) for n in names))
    return np.random.Generator(np.random.PCG64(seq))


def subseed(seed, *names) -> int:
    """Deterministic integer seed for a named child computation."""
    return int(stream(seed, *names).integers(0, 2**31 - 1))

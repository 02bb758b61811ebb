"""Seed splitting.

Every random stream in the package is derived from one integer seed plus a
purpose tag, e.g. ``derive_rng(seed, "init", restart)``. Tags are hashed with
CRC-32 so the mapping is stable across platforms and Python versions, and
the resulting words are fed to :class:`numpy.random.SeedSequence`.
"""

from __future__ import annotations

import zlib

import numpy as np


def _word(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    return zlib.crc32(str(tag).encode("utf-8"))


def derive_rng(seed: int, *tags) -> np.random.Generator:
    """Independent generator for ``seed`` and the given purpose tags."""
    words = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF]
    words.extend(_word(t) for t in tags)
    return np.random.default_rng(np.random.SeedSequence(words))

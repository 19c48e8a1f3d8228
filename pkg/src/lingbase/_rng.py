"""Seeded random streams derived from one master seed by labels and counters."""
from __future__ import annotations

import zlib

import numpy as np


def _key(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


def substream(seed: int, *labels) -> np.random.Generator:
    """Independent generator for ``(seed, *labels)``; the same key always
    yields the same stream regardless of call order."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, *(_key(x) for x in labels)])

"""Seeded random streams.

All stochastic pieces (initialization, Gumbel noise, batch order, sampling of
embeddings) draw from generators created here so a run is reproducible from
its seed alone.
"""

from __future__ import annotations

import zlib

import numpy as np


def make_rng(seed: int, *stream: str | int) -> np.random.Generator:
    """Generator for ``seed``, optionally split into a named independent stream."""
    keys = [int(seed) & 0xFFFFFFFF]
    for part in stream:
        keys.append(zlib.crc32(str(part).encode()) if isinstance(part, str) else int(part) & 0xFFFFFFFF)
    return np.random.default_rng(keys)

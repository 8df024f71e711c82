"""Reproducible random streams.

All randomness flows from one master seed.  Named substreams are derived with
``SeedSequence`` and drive counter-based Philox generators, so independent
batches (trajectory chunks, pipeline stages) are reproducible regardless of
thread scheduling: chunk ``c`` of purpose ``"train"`` always sees the same
stream, no matter which worker runs it.
"""
from __future__ import annotations

import zlib

import numpy as np

__all__ = ["philox", "substream", "chunk_streams", "as_generator"]


def _tag(token) -> int:
    if isinstance(token, (int, np.integer)):
        return int(token) & 0xFFFFFFFF
    return zlib.crc32(str(token).encode("utf8"))


def substream(seed: int, *path) -> np.random.SeedSequence:
    """Derive a named SeedSequence from the master seed and a purpose path."""
    return np.random.SeedSequence([int(seed)] + [_tag(t) for t in path])


def philox(seed: int, *path) -> np.random.Generator:
    """Counter-based generator for the given purpose path."""
    return np.random.Generator(np.random.Philox(substream(seed, *path)))


def chunk_streams(seed: int, *path, n_chunks: int) -> list[np.random.Generator]:
    """One independent generator per chunk, indexed by chunk number."""
    return [philox(seed, *path, "chunk", c) for c in range(n_chunks)]


def as_generator(rng) -> np.random.Generator:
    """Accept either a seed or a ready Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return np.random.Generator(np.random.Philox())
    return philox(int(rng))

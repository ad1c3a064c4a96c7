"""Deterministic RNG streams fanned out from a single root seed.

Every stochastic component derives its generator via ``generator(root, *path)``
so that one root seed reproduces the entire run.  Stream splitting uses
numpy's SeedSequence spawn-key mechanism (a splitmix-style hash), with string
path elements mapped to stable 32-bit keys.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part: int | str) -> int:
    if isinstance(part, int):
        return part
    return zlib.crc32(part.encode("utf-8"))


def seed_sequence(root: int, *path: int | str) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=root, spawn_key=tuple(_key(p) for p in path))


def generator(root: int, *path: int | str) -> np.random.Generator:
    """A PCG64 generator for the stream identified by (root, *path)."""
    return np.random.Generator(np.random.PCG64(seed_sequence(root, *path)))

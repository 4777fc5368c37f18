"""Named, splittable random streams on numpy's counter-based Philox generator.

A stream is addressed by ``(seed, *path)``; each path component is hashed to
a stable integer so streams are reproducible across processes and platforms.
Fixing one stream (say ``"env"``) while varying another (``"policy"``) is what
paired comparisons and finite-difference checks rely on.
"""
from __future__ import annotations

import zlib

import numpy as np

STREAM_NAMES = ("env", "policy", "init")


def _word(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed: int, *path) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFF] + [_word(p) for p in path]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


class Streams:
    """A bundle of named generators derived from one seed."""

    def __init__(self, seed: int, *path) -> None:
        self.seed = int(seed)
        self.path = tuple(path)
        self.env = stream(seed, *path, "env")
        self.policy = stream(seed, *path, "policy")
        self.init = stream(seed, *path, "init")

    def split(self, *sub) -> "Streams":
        return Streams(self.seed, *self.path, *sub)

"""Deterministic derivation of independent RNG streams from one run seed."""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _tag(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & _MASK64


def derive(seed: int, *tags: int | str) -> int:
    """Return a 64-bit seed that depends only on ``seed`` and ``tags``."""
    entropy = [int(seed) & _MASK64] + [_tag(t) for t in tags]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])


def rng(seed: int, *tags: int | str) -> np.random.Generator:
    if not tags:
        return np.random.default_rng(int(seed) & _MASK64)
    return np.random.default_rng(derive(seed, *tags))

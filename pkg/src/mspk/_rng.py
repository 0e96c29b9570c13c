"""Keyed counter-based random streams.

Every random quantity in the package is drawn from a generator whose state
is derived from ``(seed, *tags)`` through ``SeedSequence`` hashing.  A draw indexed by ``i`` therefore
depends only on the seed and ``i``, never on how work was split across
workers or on what was drawn before it.
"""
from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _word(tag) -> int:
    if isinstance(tag, str):
        return zlib.crc32(tag.encode("utf-8"))
    return int(tag) & _MASK64


def stream(seed: int, *tags) -> np.random.Generator:
    """Return an independent generator keyed by ``seed`` and ``tags``.

    Tags may be non-negative integers (sample indices) or short strings
    naming the purpose of the stream.
    """
    words = [_word(seed)] + [_word(t) for t in tags]
    return np.random.Generator(np.random.SFC64(np.random.SeedSequence(words)))

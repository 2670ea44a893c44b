"""Seed-substream derivation.

Every randomized operation in the package derives its own generator from an
explicit integer seed plus a tuple of context keys, so results never depend
on call order or sharing of generator state between components.
"""

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _key_word(key):
    if isinstance(key, (int, np.integer)):
        return int(key) & _MASK64
    return zlib.crc32(str(key).encode("utf-8"))


def substream(seed, *keys):
    """Independent ``numpy.random.Generator`` for (seed, *keys)."""
    entropy = [int(seed) & _MASK64] + [_key_word(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))

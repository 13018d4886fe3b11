"""Seed derivation and generator construction.

All randomness flows from ``numpy.random.Generator`` backed by PCG64.  Child
seeds for independent streams are produced by folding a base seed with
stream tags through the SplitMix64 finaliser::

    h = splitmix64(base)
    for tag in tags:
        h = splitmix64(h ^ tag64(tag))

where ``tag64`` is the tag itself for integers and the 64-bit FNV-1a hash of
the UTF-8 bytes for strings.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def fnv1a64(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & MASK64
    return h


def derive_seed(base: int, *tags: int | str) -> int:
    """Mix ``base`` with ``tags`` into an independent 64-bit child seed."""
    h = splitmix64(int(base) & MASK64)
    for tag in tags:
        t = fnv1a64(tag) if isinstance(tag, str) else int(tag) & MASK64
        h = splitmix64(h ^ t)
    return h


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & MASK64))


def next_seed(rng: np.random.Generator) -> int:
    """Draw a fresh 64-bit seed from an existing stream."""
    return int(rng.integers(0, MASK64, dtype=np.uint64, endpoint=True))

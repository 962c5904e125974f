"""Deterministic per-replica RNG stream derivation.

Streams are derived from (base seed, n, replica) with a splitmix64 mixer so
that a parallel schedule and a serial schedule produce identical replicas.
"""

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 step; a 64-bit finalizer with good avalanche."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def stream_seed(base: int, n: int, replica: int) -> int:
    """64-bit seed for the stream of one replica of one grid point."""
    s = splitmix64(base & _MASK)
    s = splitmix64(s ^ ((n & _MASK) * 0xD1342543DE82EF95 & _MASK))
    s = splitmix64(s ^ ((replica & _MASK) * 0xAF251AF3B0F025B5 & _MASK))
    return s


def stream_rng(base: int, n: int, replica: int) -> np.random.Generator:
    return np.random.default_rng(stream_seed(base, n, replica))

"""Deterministic seed derivation for parallel-safe sub-streams."""

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(seed: int, index: int = 0) -> int:
    """Derive an independent 64-bit sub-seed from (seed, index).

    splitmix64 finalizer over seed advanced by (index+1) golden-ratio steps;
    the same (seed, index) pair always yields the same value.
    """
    z = (seed + (index + 1) * _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def subseed(seed: int, *indices: int) -> int:
    """Chain splitmix64 over several indices (sample, stage, ...)."""
    for index in indices:
        seed = splitmix64(seed, index)
    return seed


def rng_for(seed: int, *indices: int) -> np.random.Generator:
    return np.random.default_rng(subseed(seed, *indices) if indices else seed)

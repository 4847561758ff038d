"""Seed derivation and deterministic random streams.

A single pipeline seed fans out to per-stage seeds through a splitmix64
finalizer keyed by the stage name, so each stage is independently
reproducible. Sample streams use the counter-based Philox generator, which
makes output independent of evaluation order and thread scheduling.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _mix(x: int) -> int:
    # splitmix64 finalizer
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(seed: int, stage: str) -> int:
    """Derive a 64-bit stage seed from a global seed and a stage label."""
    x = seed & _MASK64
    for b in stage.encode("utf-8"):
        x = _mix(x ^ b)
    return _mix(x)


def generator(seed: int) -> np.random.Generator:
    """Counter-based generator; a pure function of the seed."""
    return np.random.Generator(np.random.Philox(key=seed & _MASK64))


def uniforms(seed: int, shape) -> np.ndarray:
    """Deterministic uniform [0, 1) tensor with a fixed layout."""
    return generator(seed).random(shape)

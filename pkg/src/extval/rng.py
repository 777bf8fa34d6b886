"""Seed derivation and reproducible random draws.

Every stream is a Philox (counter-based) generator keyed by a tuple of
nonnegative integers, e.g. ``(seed, sigma_index, repetition, n)``.  Streams
never depend on the order in which other streams were consumed, so results
do not change with the number of worker threads.
"""

from __future__ import annotations

import numpy as np


def derive_seed(*keys: int) -> int:
    """Collapse a key tuple into a single 63-bit seed."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def stream(*keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in keys])))


def standard_normal(gen: np.random.Generator, size) -> np.ndarray:
    """Box-Muller transform of uniform draws."""
    size = (size,) if np.isscalar(size) else tuple(size)
    count = int(np.prod(size))
    half = (count + 1) // 2
    u1 = 1.0 - gen.random(half)  # (0, 1]
    u2 = gen.random(half)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    out = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:count]
    return out.reshape(size)

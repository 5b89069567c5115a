"""64-bit seed derivation.

Per-item seeds come from the SplitMix64 sequence::

    z = (master + (index + 1) * 0x9E3779B97F4A7C15) mod 2**64
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 mod 2**64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB mod 2**64
    seed = z ^ (z >> 31)

i.e. ``mix_seed(master, i)`` is the ``i``-th output (zero based) of a
SplitMix64 generator whose state starts at ``master``.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64_finalize(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix_seed(master: int, index: int) -> int:
    return splitmix64_finalize(int(master) + (int(index) + 1) * GOLDEN_GAMMA)


def rng_for(seed: int) -> np.random.Generator:
    """A generator owned by one consumer; never shared between items."""
    return np.random.Generator(np.random.PCG64(int(seed) & MASK64))


def normal_stream(seed: int, n: int) -> np.ndarray:
    """Standard normal draws; entry ``k`` belongs to sample ``k``."""
    return rng_for(seed).standard_normal(n)

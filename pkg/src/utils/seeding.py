"""
Deterministic seed derivation.

All randomness in towerforge comes from numpy Generators seeded through
derive_seed. A child seed is produced by folding each key into the parent
with the splitmix64 finalizer:

    state = parent
    for key in keys:
        state = splitmix64(state ^ key_bits(key))

where key_bits is the integer itself for ints and the first 8 bytes of a
BLAKE2b digest (little endian) for strings. Python's built-in hash() is
salted per process and is never used.
"""

import hashlib
from typing import Union

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF

Key = Union[int, str]


def splitmix64(state: int) -> int:
    """One splitmix64 step: advance by the golden gamma and mix."""
    z = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _key_bits(key: Key) -> int:
    if isinstance(key, int):
        return key & _MASK64
    digest = hashlib.blake2b(str(key).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_seed(seed: int, *keys: Key) -> int:
    """Derive a 64-bit child seed from a parent seed and a sequence of keys."""
    state = splitmix64(seed & _MASK64)
    for key in keys:
        state = splitmix64(state ^ _key_bits(key))
    return state


def make_rng(seed: int, *keys: Key) -> np.random.Generator:
    """numpy Generator seeded from derive_seed(seed, *keys)."""
    return np.random.default_rng(derive_seed(seed, *keys))

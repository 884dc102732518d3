"""
Seed helpers shared by environments and trainers.
"""
import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stable_hash(key: str) -> int:
    """Process-independent 64-bit hash of a string (Python's hash() is salted)."""
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_seed(seed: int, key: str) -> int:
    """
    Derive a child seed for a named sub-entity.

    Args:
        seed: Parent seed (any non-negative integer, reduced to 64 bits)
        key: Stable identifier of the child (agent id, component name)

    Returns:
        seed XOR stable_hash(key), masked to 64 bits
    """
    return (int(seed) & _MASK64) ^ stable_hash(key)


def make_rng(seed: int) -> np.random.Generator:
    """Seeded numpy generator; the only source of randomness in the toolkit."""
    return np.random.default_rng(int(seed) & _MASK64)

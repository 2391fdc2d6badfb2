"""Deterministic RNG stream derivation.

Every random quantity in the package draws from a stream keyed by the user
seed plus a tag and, for per-observation quantities, the observation index.
Streams are independent of execution order, so parallel schedules and grid
enumeration order cannot change the data.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _key_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & _MASK64
    if isinstance(key, str):
        digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    raise TypeError(f"stream key must be int or str, got {type(key).__name__}")


def substream(seed, *keys) -> np.random.Generator:
    """Generator seeded by (seed, *keys); identical inputs give identical streams."""
    entropy = [_key_int(seed)] + [_key_int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(seed, *keys) -> int:
    """Collapse (seed, *keys) into a single 64-bit seed for nested pipelines."""
    entropy = [_key_int(seed)] + [_key_int(k) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])

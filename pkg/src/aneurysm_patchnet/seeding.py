"""Seed derivation.

Every random stream in the package is derived from one master seed and a
tuple of string-able keys, so no code ever touches global RNG state.
"""
import hashlib

import numpy as np


def derive_seed(master_seed: int, *keys) -> int:
    """Return a 64-bit seed that depends only on ``master_seed`` and ``keys``."""
    payload = repr((int(master_seed),) + tuple(str(k) for k in keys)).encode()
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")


def derive_rng(master_seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, *keys))

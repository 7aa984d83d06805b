"""Seed derivation.

Every random stream in the package is a numpy ``PCG64`` generator. Child seeds
are derived by hashing ``(parent seed, stage name, index)`` with BLAKE2b and
taking the first 8 bytes as an unsigned 64-bit integer, so per-image streams do
not depend on the order (or process) in which images are handled.
"""

from __future__ import annotations

import hashlib

import numpy as np

SEED_MASK = (1 << 64) - 1


def child_seed(parent: int, stage: str, index: int = 0) -> int:
    key = f"{int(parent) & SEED_MASK}:{stage}:{int(index)}".encode("ascii")
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & SEED_MASK))

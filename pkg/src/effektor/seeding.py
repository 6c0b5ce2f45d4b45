"""Deterministic, scheduling-independent random stream derivation.

Every random draw in the package is made from a child generator derived
from a master seed plus a path of role tags (strings) and indices (ints).
The derivation hashes the path with SHA-256, so child streams do not
depend on execution order or worker count, and the same (master seed,
path) always yields the same stream on every platform.
"""

from __future__ import annotations

import hashlib

import numpy as np


def child_entropy(master_seed: int, *path: int | str) -> list[int]:
    """Hash (master_seed, *path) into four 32-bit words of entropy."""
    h = hashlib.sha256()
    h.update(str(int(master_seed)).encode())
    for part in path:
        h.update(b"/")
        if isinstance(part, (int, np.integer)):
            h.update(b"i" + str(int(part)).encode())
        elif isinstance(part, str):
            h.update(b"s" + part.encode())
        else:
            raise TypeError(f"seed path parts must be int or str, got {type(part)!r}")
    digest = h.digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


def child_seed(master_seed: int, *path: int | str) -> np.random.SeedSequence:
    return np.random.SeedSequence(child_entropy(master_seed, *path))


def derive_seed(master_seed: int, *path: int | str) -> int:
    """A plain 63-bit int seed for the stream (handy to pass around)."""
    words = child_entropy(master_seed, *path)
    return (words[0] | (words[1] << 32)) & (2**63 - 1)


def child_rng(master_seed: int, *path: int | str) -> np.random.Generator:
    """Generator for the stream identified by (master_seed, *path)."""
    return np.random.default_rng(child_seed(master_seed, *path))


def as_rng(seed) -> np.random.Generator:
    """Accept an int seed, a SeedSequence, or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)

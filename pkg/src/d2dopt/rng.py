"""Seed splitting.

Every random draw in the package comes from a generator derived from one
root seed plus a path of integer or string keys.  Distinct paths give
statistically independent streams (numpy ``SeedSequence`` spawn keys), so
adding randomness in one place never perturbs another.
"""

import zlib

import numpy as np

MASK64 = (1 << 64) - 1


def _key(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    part = int(part)
    if part < 0:
        raise ValueError("seed path components must be non-negative")
    return part


def seed_sequence(root, *path):
    return np.random.SeedSequence(int(root) & MASK64, spawn_key=tuple(_key(p) for p in path))


def substream(root, *path):
    """Independent ``numpy.random.Generator`` for ``(root, *path)``."""
    return np.random.default_rng(seed_sequence(root, *path))


def derive_seed(root, *path):
    """64-bit integer seed for ``(root, *path)``."""
    return int(seed_sequence(root, *path).generate_state(1, np.uint64)[0])

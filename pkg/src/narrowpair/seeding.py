"""Deterministic random substreams.

Every stochastic routine draws from a generator derived from
``(root_seed, label, *indices)``.  The label is hashed with CRC-32 so the
derivation is stable across Python versions and processes (``hash()`` is
salted and must not be used here).
"""

import zlib

import numpy as np

from .errors import DomainError


def seed_sequence(root_seed, label, *indices):
    root = int(root_seed)
    if root < 0 or root >= 2**64:
        raise DomainError("seed must be an unsigned 64-bit integer, got %r" % root_seed)
    key = [zlib.crc32(label.encode("utf-8"))] + [int(i) for i in indices]
    return np.random.SeedSequence(entropy=root, spawn_key=tuple(key))


def derive_rng(root_seed, label, *indices):
    """Return a ``numpy.random.Generator`` for the given substream."""
    return np.random.Generator(np.random.PCG64(seed_sequence(root_seed, label, *indices)))

"""Seed derivation helpers.

Every random quantity in the package is a pure function of a user seed plus
a tuple of integer keys, so results do not depend on evaluation order.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(seed: int, *keys: int) -> int:
    """Return a 64-bit child seed for ``(seed, *keys)``."""
    entropy = [int(seed) & _MASK64, *(int(k) & _MASK64 for k in keys)]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])


def stable_hash(text: str) -> int:
    """64-bit hash of ``text`` that is identical across processes and runs."""
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


def counter_rng(seed: int, stream: int, slot: int, attempt: int = 0) -> np.random.Generator:
    """Counter-based generator for one (stream, slot, attempt) cell.

    The Philox key is the seed; the upper counter words address the cell, so
    draws for different cells never overlap and can be produced in any order.
    """
    counter = [0, attempt & _MASK64, slot & _MASK64, stream & _MASK64]
    return np.random.Generator(np.random.Philox(key=int(seed) & _MASK64, counter=counter))

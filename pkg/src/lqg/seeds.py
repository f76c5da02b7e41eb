"""Deterministic seed derivation for ensembles and sub-streams.

Every ensemble member gets an integer seed derived from (root, indices...)
through numpy's SeedSequence hashing, so results are independent of batch
sizes, worker counts and evaluation order.
"""

from __future__ import annotations

import numpy as np

__all__ = ["derive_seed", "rng_for"]


def derive_seed(*parts: int) -> int:
    """Collapse (root, index, ...) into a single reproducible integer seed."""
    entropy = tuple(int(p) & 0xFFFFFFFFFFFFFFFF for p in parts)
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])


def rng_for(*parts: int) -> np.random.Generator:
    """Generator seeded from a derived stream key."""
    return np.random.default_rng(derive_seed(*parts))

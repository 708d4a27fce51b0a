"""Seed derivation for independent, reproducible random streams."""

from __future__ import annotations

import numpy as np

from .codec import encode, sha256

SEED_MASK = (1 << 64) - 1


def derive_seed(master_seed: int, role: str, *index: int | str) -> int:
    """
    Derive a child seed as SHA-256(master seed || role || index...).

    Each (role, index) pair names one stream, e.g. ``("device", 3, round)``,
    so results never depend on the order in which streams are consumed.
    """
    material = encode(master_seed & SEED_MASK) + encode(role) + encode(list(index))
    return int.from_bytes(sha256(material)[:8], "little")


def make_rng(master_seed: int, role: str, *index: int | str) -> np.random.Generator:
    """Return a counter-based (Philox) generator for the named stream."""
    return np.random.Generator(np.random.Philox(derive_seed(master_seed, role, *index)))

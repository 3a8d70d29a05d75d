"""Deterministic hashing and seed derivation.

Python's builtin ``hash`` is salted per process, so anything that must be
reproducible across runs (feature buckets, per-impression seeds) goes through
keyed blake2b instead.
"""

from __future__ import annotations

import hashlib

_SEP = b"\x1f"


def stable_hash64(*parts, seed: int = 0) -> int:
    """Hash a tuple of strings/ints to a stable unsigned 64-bit integer."""
    h = hashlib.blake2b(digest_size=8, key=(seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little"))
    for part in parts:
        if isinstance(part, str):
            h.update(part.encode("utf-8"))
        elif isinstance(part, int):
            h.update(part.to_bytes(8, "little", signed=True))
        else:
            raise TypeError(f"unhashable part type: {type(part).__name__}")
        h.update(_SEP)
    return int.from_bytes(h.digest(), "little")


def derive_seed(*parts, seed: int = 0) -> int:
    """Derive a nonnegative 63-bit seed from a base seed and index parts.

    Used for hierarchical seeding (one RNG per impression, per context, ...)
    so results do not depend on iteration order or worker count.
    """
    return stable_hash64(*parts, seed=seed) & 0x7FFFFFFFFFFFFFFF

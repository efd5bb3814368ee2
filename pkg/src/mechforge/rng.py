"""Named random streams derived from one root seed.

Every consumer asks for ``stream(root, "name", ...)`` so that adding or
reordering draws in one subsystem never shifts the numbers seen by another.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _key(parts) -> list[int]:
    digest = hashlib.sha256("/".join(str(p) for p in parts).encode()).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def stream(root: int, *names) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(root)] + _key(names))))


def child_seed(root: int, *names) -> int:
    """A 63-bit integer seed for the named child stream."""
    return int(stream(root, *names).integers(0, 2**63 - 1))

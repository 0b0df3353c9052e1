"""Deterministic RNG derivation.

Every stochastic step draws from a generator derived from (root seed, step
index, purpose label), so a run is reproducible regardless of batch order or
how many draws earlier steps consumed. String labels hash through sha256 to
keep the derivation stable across Python builds (``hash()`` is salted).
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_of(label: str) -> int:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive(seed: int, *scope: int | str) -> np.random.Generator:
    """Generator for a (seed, scope...) coordinate; ints pass through, strings hash."""
    entropy = [int(seed)] + [_key_of(s) if isinstance(s, str) else int(s) for s in scope]
    return np.random.default_rng(np.random.SeedSequence(entropy))

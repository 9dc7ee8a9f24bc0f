"""Deterministic seed derivation and config digests.

Every random quantity in the package is drawn from a Generator derived from
(master_seed, *tags) via sha256, so results are reproducible across platforms
and independent of worker scheduling.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np


def _tag_bytes(tag) -> bytes:
    if isinstance(tag, (int, np.integer)):
        return b"i" + str(int(tag)).encode()
    if isinstance(tag, float):
        # repr is shortest round-trip, stable across platforms for float64
        return b"f" + repr(tag).encode()
    if isinstance(tag, str):
        return b"s" + tag.encode()
    raise TypeError(f"unsupported seed tag type: {type(tag)!r}")


def derive_seed(master_seed: int, *tags) -> int:
    """Stable 128-bit seed from a master seed and a tag path."""
    h = hashlib.sha256()
    h.update(str(int(master_seed)).encode())
    for tag in tags:
        h.update(b"\x1f")
        h.update(_tag_bytes(tag))
    return int.from_bytes(h.digest()[:16], "little")


def derive_rng(master_seed: int, *tags) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(derive_seed(master_seed, *tags)))


def config_digest(config: dict) -> str:
    """sha256 of the canonical JSON encoding of a flat config dict."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()

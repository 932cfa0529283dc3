"""Seed derivation shared by every randomized component.

A stream is identified by ``(base_seed, tag, counter)``. The tag is hashed
with CRC32 (stable across processes, unlike ``hash``) and the triple is fed to
:class:`numpy.random.SeedSequence`, whose mixing is the documented entropy
pool of NumPy. Streams are reproducible within one build; nothing here tries
to be bit-compatible with other implementations.
"""

from __future__ import annotations

import os
import zlib

import numpy as np

BASE_SEED_ENV = "O2NC_BASE_SEED"


def tag_id(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def derive_seed_sequence(base_seed: int, tag: str = "", counter: int = 0) -> np.random.SeedSequence:
    if base_seed < 0 or counter < 0:
        raise ValueError("seeds and counters must be non-negative")
    return np.random.SeedSequence([int(base_seed), tag_id(tag), int(counter)])


def derive_rng(base_seed: int, tag: str = "", counter: int = 0) -> np.random.Generator:
    """Independent generator for the stream ``(base_seed, tag, counter)``."""
    return np.random.default_rng(derive_seed_sequence(base_seed, tag, counter))


def env_base_seed(default: int | None = None) -> int | None:
    """Base seed override from the ``O2NC_BASE_SEED`` environment variable."""
    raw = os.environ.get(BASE_SEED_ENV)
    if raw is None or raw.strip() == "":
        return default
    return int(raw)

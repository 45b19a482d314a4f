"""Seed derivation: one independent stream per (master seed, label, counter)."""
from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, label: str, counter: int = 0) -> np.random.Generator:
    key = zlib.crc32(label.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, key, int(counter)]))

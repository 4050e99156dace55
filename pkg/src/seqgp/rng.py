"""Counter-based random streams.

Every stream is a Philox generator keyed by ``(seed, purpose)`` with the
stream index placed in the top counter word, so draws for sample ``j`` do
not depend on how many other samples exist or in which order they run.
"""
from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def purpose_tag(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    if seed < 0:
        raise ValueError("seed must be non-negative")
    key = np.array([seed & _MASK64, purpose_tag(purpose)], dtype=np.uint64)
    counter = np.array([0, 0, 0, index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def normal_columns(seed: int, purpose: str, rows: int, n: int, start: int = 0) -> np.ndarray:
    """``rows x n`` standard normals, column ``j`` from stream ``start + j``."""
    out = np.empty((rows, n))
    for j in range(n):
        out[:, j] = stream(seed, purpose, start + j).standard_normal(rows)
    return out

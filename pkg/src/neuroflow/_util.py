"""Shared helpers: deterministic seed derivation and file output."""

from __future__ import annotations

import json
import zlib
from pathlib import Path

import numpy as np


def derived_seed(root_seed: int, purpose: str, *indices: int) -> np.random.SeedSequence:
    """Stable sub-seed for (root seed, purpose string, integer indices).

    The purpose string is hashed with crc32 so the derivation does not
    depend on Python's per-process string hashing.
    """
    entropy = [int(root_seed), zlib.crc32(purpose.encode("utf-8"))]
    entropy.extend(int(i) for i in indices)
    return np.random.SeedSequence(entropy)


def rng_from(seed) -> np.random.Generator:
    """Accepts an int, SeedSequence, or Generator and returns a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def write_json(path, obj) -> None:
    """Deterministic JSON output (sorted keys, shortest-round-trip floats)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with Path(path).open("r", encoding="utf-8") as fh:
        return json.load(fh)


def write_csv_matrix(path, array: np.ndarray) -> None:
    """Round-trip-exact CSV for a 2-D float array."""
    np.savetxt(path, np.asarray(array, dtype=np.float64), delimiter=",", fmt="%.17g")


def read_csv_matrix(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", dtype=np.float64)
    if data.ndim == 1:
        data = data[None, :]
    return data

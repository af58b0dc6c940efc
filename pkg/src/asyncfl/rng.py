"""Named, reproducible random streams.

All randomness in a run flows from a single 64-bit master seed.  Substreams
are addressed by a tuple of names/integers (e.g. ("grad", round, client)) so
that any prefix of a run is bitwise identical to a shorter run with the same
seed.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK = (1 << 64) - 1


def _key_to_int(key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key) & _MASK


def substream(master_seed: int, *keys) -> np.random.Generator:
    """Return a Generator for the substream addressed by ``keys``."""
    entropy = [int(master_seed) & _MASK] + [_key_to_int(k) for k in keys]
    return np.random.default_rng(entropy)

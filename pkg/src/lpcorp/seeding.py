"""Deterministic seed derivation.

All randomness in a run flows from a single global seed. Each consumer asks for
a generator keyed by a purpose label (and optionally an item key such as an
admission id), so adding or removing one item never perturbs another's draws.
"""
import hashlib

import numpy as np


def derive_seed(seed: int, *keys) -> int:
    h = hashlib.sha256(str(int(seed)).encode())
    for k in keys:
        h.update(b"\x1f")
        h.update(str(k).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")


def rng_for(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))

"""Named random streams derived from one master seed.

Every stream is a Philox (counter-based) generator keyed by
``SeedSequence(master_seed, spawn_key=(crc32(name), *extra))``, so a stream can
be reproduced from ``(master_seed, name, extra)`` alone, independent of how
many other streams were drawn before it.
"""
from __future__ import annotations

import zlib

import numpy as np

CLASS_GEN = "class-gen"
TRAJECTORY = "trajectory"
MODEL_PICK = "model-pick"
PLANNER_RESTARTS = "planner-restarts"
REGRET2PAC = "regret2pac"
POLICY = "policy"
PROBES = "probes"


def stream(master_seed: int, name: str, *extra: int) -> np.random.Generator:
    key = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(key, *map(int, extra)))
    return np.random.Generator(np.random.Philox(ss))


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator or an int seed; anything else is rejected."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, (int, np.integer)):
        return stream(int(rng), "default")
    raise TypeError(f"expected numpy Generator or int seed, got {type(rng).__name__}")

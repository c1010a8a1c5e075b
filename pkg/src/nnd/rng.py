"""Seeded substreams on top of the Philox counter-based generator.

Every random draw in the package comes from ``substream(seed, name, index)``.
The key is derived from (seed, crc32(name), index) through ``SeedSequence``, so
iteration ``t`` of a run can be reproduced without replaying iterations
``T..t+1``, and separate purposes (init, per-iteration noise, measurement
noise, dataset, training) never share draws.
"""

import zlib

import numpy as np

ALGORITHM = "philox4x64-10"

# Stream names used across the package. Kept in one place so manifests can list them.
STREAMS = ("dataset", "init", "noise", "measurement", "train", "validation", "params")


def stream_id(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, name: str, index: int = 0) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be a non-negative integer, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(stream_id(name), int(index)))
    return np.random.Generator(np.random.Philox(ss))


def describe(seed: int) -> dict:
    """Manifest entry documenting how draws were derived from ``seed``."""
    return {
        "algorithm": ALGORITHM,
        "seed": int(seed),
        "rule": "SeedSequence(seed, spawn_key=(crc32(stream_name), index)) -> Philox",
        "streams": list(STREAMS),
    }

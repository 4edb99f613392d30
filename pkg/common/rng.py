# common/rng.py

import zlib

import numpy as np


def stream_key(name: str) -> int:
    """Stable integer key for a named random stream."""
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, *names: str | int) -> np.random.Generator:
    """
    Independent generator derived from `seed` and a path of names.

    substream(7, "stereo", 3) always yields the same sequence and never shares
    state with substream(7, "lidar", 3).
    """
    key = tuple(stream_key(n) if isinstance(n, str) else int(n) for n in names)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))

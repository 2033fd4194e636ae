"""Counter-keyed random streams.

Every stream is a Philox generator keyed by ``(seed, purpose, index)``, so a
given draw depends only on what it is for and where it sits in the run, never
on which worker produced it or in which order batches were computed.
"""

from __future__ import annotations

import enum

import numpy as np


class Purpose(enum.IntEnum):
    BITS = 1
    JITTER = 2
    COUNTS = 3
    PILOT = 4
    OFFSET = 5
    FEEDBACK = 6
    DATA = 7
    INIT = 8
    BEACON = 9
    SWEEP = 10


def stream(seed: int, purpose: int, *index: int) -> np.random.Generator:
    """Independent generator for ``(seed, purpose, *index)``; indices must be >= 0."""
    if seed < 0 or any(i < 0 for i in index):
        raise ValueError("seed and stream indices must be non-negative")
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(purpose), *map(int, index)))
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed: int, index: int) -> int:
    """64-bit seed for the ``index``-th independent run under a campaign seed."""
    words = np.random.SeedSequence(int(seed), spawn_key=(0, int(index))).generate_state(2, np.uint32)
    return int(words[0]) | (int(words[1]) << 32)

"""Named, independent random streams derived from one master seed.

Each stream is a counter-based Philox generator keyed by ``(seed, stream index)``, so
the draws of one stream never depend on how many draws another stream consumed, and a
longer chain reproduces the prefix of a shorter one.
"""

from __future__ import annotations

import numpy as np

STREAMS = ("momentum", "jitter", "accept", "init", "data")


def stream(seed: int, name: str) -> np.random.Generator:
    if name not in STREAMS:
        raise KeyError(f"unknown stream {name!r}; expected one of {STREAMS}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(STREAMS.index(name),))
    return np.random.Generator(np.random.Philox(ss))


class ChainStreams:
    """Momentum, jitter and accept-test generators for one chain."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.momentum = stream(seed, "momentum")
        self.jitter = stream(seed, "jitter")
        self.accept = stream(seed, "accept")

"""Per-replication uniform streams.

Replication ``rep`` of master seed ``seed`` reads from a Philox counter-based
generator keyed by ``SeedSequence([seed, rep])``.  The first
``INITIAL_DRAWS`` uniforms come from a separate child stream so that the
number of batteries charging at time 0 does not shift the event stream.
"""
from __future__ import annotations

import numpy as np


def replication_generator(seed: int, rep: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(rep)])))


class UniformStream:
    def __init__(self, seed: int, rep: int, block: int):
        if seed < 0 or rep < 0:
            raise ValueError("seed and replication index must be nonnegative")
        root = np.random.SeedSequence([int(seed), int(rep)])
        events, initial = root.spawn(2)
        self._events = np.random.Generator(np.random.Philox(events))
        self._initial = np.random.Generator(np.random.Philox(initial))
        self.block = int(block)

    def next_block(self) -> np.ndarray:
        return self._events.random(self.block)

    def initial_draws(self, n: int) -> np.ndarray:
        return self._initial.random(n)

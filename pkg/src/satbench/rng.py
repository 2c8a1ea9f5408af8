"""Deterministic random-number streams.

All randomness in the workbench flows through counter-based Philox
generators keyed by (master seed, stream path). Two runs with the same
master seed therefore produce bit-identical results regardless of how
work is ordered or parallelized: every sample, grid cell, and training
run owns its own stream, addressed by integer path components.

Uniform reals come from numpy's standard 53-bit construction.
"""

from __future__ import annotations

import numpy as np

# Stream domains. Each top-level consumer draws from its own namespace so
# adding a consumer never shifts another one's randomness.
DOMAIN_SYNTH = 0
DOMAIN_TRAIN = 1
DOMAIN_CURATE = 2
DOMAIN_TARGETS = 3
DOMAIN_DEFENSE = 4
DOMAIN_ATTACK = 5
DOMAIN_SWEEP = 6
DOMAIN_TABLE = 7
DOMAIN_ROUNDS = 8
DOMAIN_INIT = 9


def substream(seed: int, *path: int) -> np.random.Generator:
    """Return the generator for stream `path` under master `seed`.

    Equal (seed, path) pairs always yield identical generators; distinct
    paths yield statistically independent streams.
    """
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))

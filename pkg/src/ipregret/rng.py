"""Seeded random streams.

Every experiment draws from a single counter-based Philox generator keyed by
the configured 64-bit seed, so a resolved configuration pins every draw.
"""

import numpy as np

SEED_MAX = 2**64 - 1


def make_rng(seed: int) -> np.random.Generator:
    seed = int(seed)
    if not 0 <= seed <= SEED_MAX:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.Philox(seed))

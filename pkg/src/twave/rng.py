"""Deterministic random streams.

Every stochastic ensemble in the package draws from a counter-based
Philox generator keyed by (seed, trial index), so trial k is reproducible
in isolation and results do not depend on execution order or thread count.
"""

import numpy as np


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Independent generator for one ensemble member."""
    if seed < 0 or trial < 0:
        raise ValueError("seed and trial index must be nonnegative")
    key = (int(seed) << 64) + int(trial)
    return np.random.Generator(np.random.Philox(key=key))

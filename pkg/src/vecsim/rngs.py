"""Deterministic named random streams derived from the experiment seed."""

import numpy as np

# Stream keys; each (seed, key, ...) tuple yields an independent generator.
MOBILITY = 1
CHANNEL = 2
DATA = 3
TRAINING = 4
REQUESTS = 5
DRL = 6
SCHEME = 7
AGGREGATION = 8


def stream(*keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))

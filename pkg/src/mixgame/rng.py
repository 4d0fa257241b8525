"""Keyed random streams.

Every draw in the package comes from a Philox generator keyed by
``(seed, stream tag, *counters)``; simulations add the path-block id as a
counter, so which worker runs a block cannot change its draws.
"""

import numpy as np

STREAM_TAGS = {
    "gauss": 0,
    "player1": 1,
    "player2": 2,
    "probe": 3,
    "probe_mix": 4,
    "permutation": 5,
}

# paths are simulated in blocks of this many; path id p lives in block
# p // BLOCK_SIZE at position p % BLOCK_SIZE
BLOCK_SIZE = 4096


def stream(seed, tag, *counters):
    """Generator keyed by ``(seed, tag, *counters)``."""
    seed = int(seed)
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    key = [seed, STREAM_TAGS[tag], *(int(c) for c in counters)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))

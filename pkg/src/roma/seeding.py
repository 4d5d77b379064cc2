"""Root-seed splitting.

Every random consumer draws from its own substream, derived from the root seed
and a fixed purpose code through ``numpy.random.SeedSequence`` spawn keys:

    init=0, augment=1, map=2, probe=3, data=4

Further keys (epoch, batch, sample index) are appended to the spawn key, so a
substream depends only on the root seed and its coordinates, never on how many
draws other consumers made.
"""

import numpy as np

PURPOSES = {"init": 0, "augment": 1, "map": 2, "probe": 3, "data": 4}


def seed_sequence(root: int, purpose: str, *coords: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(root), spawn_key=(PURPOSES[purpose], *map(int, coords)))


def rng(root: int, purpose: str, *coords: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(root, purpose, *coords))


def substream_seed(root: int, purpose: str, *coords: int) -> int:
    return int(seed_sequence(root, purpose, *coords).generate_state(1, np.uint64)[0])

"""Counter-based random streams keyed by (master_seed, stream_id)."""

from __future__ import annotations

import numpy as np


def stream(master_seed: int, *stream_id: int) -> np.random.Generator:
    """Independent Philox generator for one (master_seed, stream_id...) key.

    The same key always yields the same stream, regardless of how many
    other streams were created before it.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(s) for s in stream_id))
    return np.random.Generator(np.random.Philox(ss))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return stream(0 if rng is None else int(rng))

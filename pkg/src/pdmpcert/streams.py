"""Counter-based random streams.

Every draw in the package comes from a Philox generator keyed by a tuple of
non-negative integers, so any chain, block or step can be replayed from
``(seed, *keys)`` alone, independently of how work was split across threads.
"""

from __future__ import annotations

import numpy as np

# purpose tags for the independent draws inside one jump
WAIT, MARK, REGIME, ACCEPT, RESIDUAL = 0, 1, 2, 3, 4


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Return the generator for the substream ``keys`` of ``seed``."""
    if seed < 0 or any(k < 0 for k in keys):
        raise ValueError("seed and stream keys must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator or an integer seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, (int, np.integer)):
        return substream(int(rng))
    raise TypeError(f"expected numpy Generator or int seed, got {type(rng).__name__}")


def split(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Independent child generators, deterministic given the parent's state."""
    return list(rng.spawn(n))

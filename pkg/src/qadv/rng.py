"""Named, independent random streams derived from a single run seed.

Training touches randomness in several places (weight init, dropout
masks, batch shuffling, explanation sampling, GAN latents).  Drawing
them all from one generator would couple unrelated components: adding
or removing one consumer would silently reshuffle every other stream.
Instead each consumer gets its own generator keyed by (seed, name), so
e.g. the QNN parameter trajectory with evaluator feedback disabled is
bit-identical to a run that never builds the evaluator at all.
"""

from __future__ import annotations

import numpy as np

__all__ = ["stream"]


def _key(name: str) -> int:
    # Stable across processes, unlike hash() which is salted.
    return int.from_bytes(name.encode("utf-8"), "little")


def stream(seed: int, name: str) -> np.random.Generator:
    """Return a Generator for stream `name` derived from `seed`.

    The same (seed, name) pair always yields the same sequence; streams
    with different names are statistically independent.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return np.random.default_rng((seed, _key(name)))

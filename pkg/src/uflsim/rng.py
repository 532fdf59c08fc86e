"""Keyed, counter-based random streams.

Every stochastic step of a run draws from its own generator, keyed by the
master seed plus a structured key (round, client id, purpose tag). Streams
are independent of scheduling order, so parallel and sequential execution
draw identical numbers.
"""

from __future__ import annotations

import numpy as np

# Purpose tags for substream keys. Distinct tags guarantee distinct streams
# even when the remaining key parts collide.
TAG_INIT = 1
TAG_DATA = 2
TAG_POSITIONS = 3
TAG_ACTIVATE = 4
TAG_GATE = 5
TAG_SELECT = 6
TAG_TRAIN = 7
TAG_SERVER_CODEBOOK = 8
TAG_COMM_CODEBOOK = 9
TAG_CHANNEL = 10
TAG_NOISE = 11


def substream(master_seed: int, *key: int) -> np.random.Generator:
    """Return a Philox generator for the (master_seed, *key) stream."""
    seq = np.random.SeedSequence((int(master_seed),) + tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))


def complex_normal(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    """Draw i.i.d. circularly-symmetric complex Gaussians with variance `var`.

    Real and imaginary parts each have variance var/2.
    """
    scale = np.sqrt(var / 2.0)
    return rng.normal(0.0, scale, shape) + 1j * rng.normal(0.0, scale, shape)

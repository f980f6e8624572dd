"""Deterministic random-stream derivation.

Every stochastic operation in the package draws from a stream addressed by
(seed, purpose, indices...).  Streams are independent of evaluation order,
so member-level work can be scheduled in any order (or in parallel) without
changing results.
"""

from __future__ import annotations

import numpy as np

# Purpose codes; fixed so that stream addresses never collide across call
# sites.  Never renumber.
DRAW = 1
PERTURB = 2
SYNTH = 3
CYCLE = 4
REDRAW = 5
DEM = 6
TOY = 7


def substream(seed: int, *path: int) -> np.random.Generator:
    """Return the generator for the stream addressed by (seed, path)."""
    key = tuple(int(p) for p in path)
    ss = np.random.SeedSequence(int(seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(seed: int, *path: int) -> int:
    """Derive a child integer seed, itself usable as a stream root."""
    key = tuple(int(p) for p in path)
    ss = np.random.SeedSequence(int(seed), spawn_key=key)
    return int(ss.generate_state(1, np.uint64)[0])

"""Seeded random number generation for every stochastic operation in the package.

All randomness flows through Philox4x64-10, a counter-based bit generator with
64-bit words. The algorithm is fixed by construction (no rejection sampling in
the generator core, no platform-dependent state), so a given seed produces the
same stream on every platform. Operations never share generators: each takes an
explicit seed and builds its own.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    """Return a fresh Philox-backed generator for the given 64-bit seed."""
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")
    return np.random.Generator(np.random.Philox(np.uint64(seed)))

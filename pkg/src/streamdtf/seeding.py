"""Seeded random-number generation.

All randomness in the package flows through numpy's PCG64 bit generator.
The algorithm is part of the reproducibility contract: the same seed yields
the same stream on every platform (for a fixed numpy version).
"""

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    """Return a PCG64-backed generator for the given integer seed."""
    return np.random.Generator(np.random.PCG64(seed))


def derive_seeds(seed: int, n: int) -> list[int]:
    """Derive `n` independent child seeds from one master seed.

    Used by drivers that need several non-overlapping streams (state
    initialization, stream shuffling, ...) from a single --seed value.
    """
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]

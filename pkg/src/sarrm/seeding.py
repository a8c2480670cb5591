"""Seed derivation.

Every random stream in the package is a PCG64 generator keyed by the run's
root seed plus a tuple ``(purpose, *indices)``.  Streams never share state,
so the order in which batch elements are processed cannot change results.
"""

import numpy as np

# purpose tags; values are part of the on-disk reproducibility contract
REALIZATION = 1
FADING = 2
DUAL_SAMPLING = 3
PARAM_INIT = 4
EXEC_FADING = 5
EXEC_INIT = 6
TEST_REALIZATION = 7


def rng_for(root_seed: int, purpose: int, *indices: int) -> np.random.Generator:
    key = (int(purpose),) + tuple(int(i) for i in indices)
    ss = np.random.SeedSequence(entropy=int(root_seed) & (2**64 - 1), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(root_seed: int, purpose: int, *indices: int) -> int:
    """A 64-bit child seed, for objects that record their own seed."""
    key = (int(purpose),) + tuple(int(i) for i in indices)
    ss = np.random.SeedSequence(entropy=int(root_seed) & (2**64 - 1), spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint64)[0])

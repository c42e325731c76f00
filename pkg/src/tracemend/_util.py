"""Small shared helpers: rounding and seed derivation."""

import math

import numpy as np

# Stage tags for deriving per-stage seeds from one root seed.
STAGE_SPLIT = 1
STAGE_INJECT_TRAIN = 2
STAGE_INJECT_TEST = 3
STAGE_MODEL_INIT = 4
STAGE_TRAIN = 5
STAGE_SYNTH = 6


def round_half_up(x: float) -> int:
    """Round to nearest integer with halves away from zero.

    Used everywhere a fraction is turned into a count so that e.g.
    0.5 * 5 events yields 3 anomalies, not banker's-rounded 2.
    """
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


def derive_seed(root_seed: int, stage: int) -> int:
    """Deterministically derive a stage seed from one root seed."""
    ss = np.random.SeedSequence((int(root_seed) & 0xFFFFFFFF, int(stage)))
    return int(ss.generate_state(1)[0])


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Generator seeded by (seed, *key); identical inputs, identical streams."""
    parts = (int(seed) & 0xFFFFFFFF,) + tuple(int(k) for k in key)
    return np.random.default_rng(np.random.SeedSequence(parts))

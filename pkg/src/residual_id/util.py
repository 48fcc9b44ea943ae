"""Small shared helpers: deterministic seed derivation."""

import numpy as np


def derive_seed(*parts):
    """Derive a child seed from integer parts, first part usually a master seed.

    The derivation is stable across runs and platforms, so every random
    quantity in the toolkit can be traced back to one master seed plus a
    documented tuple of offsets.
    """
    entropy = [int(p) & 0xFFFFFFFFFFFFFFFF for p in parts]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint32)[0])

"""Deterministic RNG derivation.

Every random draw in the package flows from one master seed through
``numpy.random.SeedSequence`` keyed by a purpose constant plus optional
indices (sample index, iteration, view, ...). Streams therefore never
depend on call order, batch composition, or worker scheduling, which is
what makes whole pipeline runs bit-reproducible.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

# Purpose namespaces. Changing a value silently reseeds every stream
# derived under it, so these are frozen.
INIT = 0
SHUFFLE = 1
MODE_TIE = 2
AUGMENT = 3
TEACHER_SIM = 4
BLOBS = 5
ENSEMBLE = 6


def derive_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Generator for ``(master_seed, *key)``; stable across processes."""
    parts = [int(master_seed), *(int(k) for k in key)]
    if any(p < 0 for p in parts):
        raise ConfigError(f"seed components must be non-negative, got {parts}")
    return np.random.default_rng(np.random.SeedSequence(parts))

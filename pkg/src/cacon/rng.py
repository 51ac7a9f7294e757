"""Seed-stream derivation.

All randomness in a run flows from one integer seed. Independent streams are
derived with numpy's SeedSequence over (seed, stream tag, *indices), e.g. the
augmentation stream for image i in epoch e is (seed, AUGMENT, e, i). This is
the documented hash from global seed to per-sample generators: no sample's
stream depends on another's, so batch composition never perturbs draws.
"""

from __future__ import annotations

import numpy as np

INIT = 1        # parameter initialization
SHUFFLE = 2     # per-epoch batch order
AUGMENT = 3     # per-sample augmentation draws
SYNTH = 4       # dataset synthesis
EVAL = 5        # evaluation-side sampling (pairs, shuffles)
FOLD = 6        # per-fold classifier init / training


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))

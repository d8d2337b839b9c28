"""Deterministic random-stream derivation.

One master seed fans out into independent substreams through numpy
``SeedSequence`` spawn keys. Every consumer of randomness (environment
construction, each fitness evaluation, each evaluation episode, each
genetic operator application) is addressed by a fixed integer path, so
results are bitwise reproducible regardless of execution order or worker
count.

Path convention used across the package::

    (STREAM_ENV,)                      environment construction draws
    (STREAM_TRAIN, phase, OP_INIT)     population init, phase 0 = main run
    (STREAM_TRAIN, phase, OP_FIT, generation, row)    one fitness call
    (STREAM_TRAIN, phase, OP_BREED, generation)       crossover + mutation
    (STREAM_TRAIN, phase, OP_PERM, generation)        column permutation
    (STREAM_EVAL, episode)             held-out evaluation episodes
    (STREAM_SWEEP, cell_index)         master seed of one sweep replicate

Fitness calls receive a ``SeedSequence`` and derive one child per episode
with :func:`child_sequences`, which is stateless (unlike
``SeedSequence.spawn``) so checkpoint resume cannot shift streams.
"""

from __future__ import annotations

import numpy as np

STREAM_ENV = 0
STREAM_TRAIN = 1
STREAM_EVAL = 2
STREAM_SWEEP = 3

OP_INIT = 0
OP_FIT = 1
OP_BREED = 2
OP_PERM = 3


def seed_sequence(master: int, *path: int) -> np.random.SeedSequence:
    """SeedSequence for the substream addressed by ``path`` under ``master``."""
    return np.random.SeedSequence(entropy=master, spawn_key=tuple(path))


def generator(master: int, *path: int) -> np.random.Generator:
    """Fresh Generator for the addressed substream."""
    return np.random.default_rng(seed_sequence(master, *path))


def child_sequences(parent: np.random.SeedSequence, n: int) -> list[np.random.SeedSequence]:
    """n children of ``parent``, derived statelessly from its spawn key."""
    base = tuple(parent.spawn_key)
    return [
        np.random.SeedSequence(entropy=parent.entropy, spawn_key=base + (i,))
        for i in range(n)
    ]


def derive_seed(master: int, *path: int) -> int:
    """A plain integer seed for the addressed substream (for serialization)."""
    return int(seed_sequence(master, *path).generate_state(1, dtype=np.uint64)[0])

"""Counter-based seed fan-out.

Replica ``i`` of a run with master seed ``m`` draws from
``SeedSequence(entropy=m, spawn_key=(i,))``.  The derivation depends only on
``(m, i)``, so an ensemble can be extended without touching existing
replicas.
"""
from __future__ import annotations

import numpy as np


def replica_seed_sequence(master_seed: int, index: int, stream: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index), int(stream)))


def replica_rng(master_seed: int, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(replica_seed_sequence(master_seed, index, stream)))


def replica_seed(master_seed: int, index: int, stream: int = 0) -> int:
    """A 64-bit integer seed for replica ``index`` (stored in file headers)."""
    return int(replica_seed_sequence(master_seed, index, stream).generate_state(1, np.uint64)[0])

"""Seed derivation and per-client random streams.

A replication seed is ``splitmix64(base_seed XOR splitmix64(rep_index))``
(all arithmetic mod 2**64). Each (purpose, client) pair then gets its own
numpy ``Generator`` spawned from that seed, so one client's draws never
depend on how many draws another client made.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

ARRIVALS = 0
DATA = 1
TRAIN = 2
ORACLE = 3
MODEL_INIT = 4
CONTRIBUTION = 5
SPLIT = 6
SUBSET_NOISE = 7


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def replication_seed(base_seed: int, rep_index: int) -> int:
    return splitmix64((base_seed & MASK64) ^ splitmix64(rep_index))


def stream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(purpose, index)))


def scenario_stream(base_seed: int) -> np.random.Generator:
    """Stream for draws shared by every replication (class centers, client shifts)."""
    return np.random.default_rng(np.random.SeedSequence(base_seed & MASK64, spawn_key=(99,)))

"""
Seeded random streams for reproducible runs.
Every (iteration, phase, district) triple gets its own statically derived generator,
so the order in which districts are processed never changes their draws.
"""

import enum
import hashlib
from typing import Callable

import numpy as np


class StreamPhase(int, enum.Enum):
    """Purpose of a random stream within one iteration."""
    BURN_IN = 1
    E_STEP = 2
    SIMULATE = 3
    INNER_BURN_IN = 4
    INNER_E_STEP = 5
    CORRECTED_E_STEP = 6
    GENERATOR = 7
    CORRECTED_BURN_IN = 8


def district_key(district_id: str) -> int:
    """Stable 128-bit integer key of a district id."""
    digest = hashlib.blake2b(str(district_id).encode("utf-8"), digest_size=16).digest()
    return int.from_bytes(digest, "big")


class RngStreams:
    """Factory of independent generators derived from one master seed."""

    def __init__(self, seed: int):
        self._seed = int(seed)

    @property
    def seed(self) -> int:
        return self._seed

    def stream(self, iteration: int, phase: StreamPhase, district_id: str) -> np.random.Generator:
        sequence = np.random.SeedSequence(
            self._seed, spawn_key=(int(iteration), int(phase), district_key(district_id))
        )
        return np.random.default_rng(sequence)

    def for_phase(self, iteration: int, phase: StreamPhase) -> Callable[[str], np.random.Generator]:
        """District-keyed stream factory for one (iteration, phase)."""
        return lambda district_id: self.stream(iteration, phase, district_id)

"""Counter-based random streams.

Every random quantity in the package is drawn from a Philox4x64-10 stream
keyed by ``(seed, stream_id)``.  Replica ``i`` of a stage owns stream
``stage_base + i`` and always starts at counter 0, so results depend only on
the seed and the replica index, never on how work is split between threads.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MASK64 = (1 << 64) - 1
STAGE_SHIFT = 40

# Stage tags keep the stream ranges of different computations disjoint.
STAGES = {
    "sse": 1,
    "catalyst": 2,
    "fk": 3,
    "spectral": 4,
    "green": 5,
    "psi": 6,
    "polaron": 7,
    "misc": 15,
}


def stream_base(stage: str, index: int = 0) -> int:
    """First stream id of ``stage``; ``index`` separates sub-tasks of one stage."""
    if stage not in STAGES:
        raise KeyError(f"unknown stage {stage!r}")
    if not 0 <= index < (1 << 16):
        raise ValueError("sub-task index out of range")
    return ((STAGES[stage] << 16 | index) << STAGE_SHIFT) & MASK64


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= MASK64:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
    return seed


def generator(seed: int, stream_id: int) -> np.random.Generator:
    """A numpy Generator on the Philox stream ``(seed, stream_id)``."""
    key = np.array([check_seed(seed), int(stream_id) & MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class StirringSchedule:
    """Position in one random stream.

    ``counter`` counts 64-bit words already consumed, so successive calls that
    share a schedule continue the same sequence instead of repeating it.
    """

    seed: int
    stream_id: int
    counter: int = 0

    def __post_init__(self):
        self.seed = check_seed(self.seed)
        self.stream_id = int(self.stream_id) & MASK64
        if self.counter < 0:
            raise ValueError("counter must be nonnegative")

    def copy(self) -> "StirringSchedule":
        return StirringSchedule(self.seed, self.stream_id, self.counter)

"""Counter-based random streams.

A stream is addressed by ``(master_seed, stream_id)`` plus an optional path of
child tags.  Draws come from a Philox generator keyed by that address, so the
output depends only on the address and the draw index, never on which worker
or in which order streams are consumed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    master_seed: int
    stream_id: int = 0
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if not (0 <= self.master_seed <= _MASK64):
            raise ValueError(f"master_seed must fit in 64 bits, got {self.master_seed}")
        if not (0 <= self.stream_id <= _MASK64):
            raise ValueError(f"stream_id must fit in 64 bits, got {self.stream_id}")

    def child(self, tag: int) -> "RngStream":
        """Independent sub-stream for one purpose inside a task."""
        return RngStream(self.master_seed, self.stream_id, self.path + (int(tag),))

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_id,) + self.path)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(self.seed_sequence()))

    def derive_seed(self) -> int:
        """A 63-bit integer seed derived from this address (for nested runs)."""
        return int(self.seed_sequence().generate_state(1, np.uint64)[0] >> np.uint64(1))

"""Monte Carlo estimate container."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class McEstimate:
    value: float
    se: float
    n: int
    seed: int | None = None

    @classmethod
    def from_samples(cls, samples, seed: int | None = None, scale: float = 1.0) -> "McEstimate":
        """Mean and standard error of ``scale * samples``."""
        x = np.asarray(samples, dtype=float)
        n = x.size
        if n == 0:
            raise ValueError("no samples")
        mean = float(x.mean()) * scale
        se = float(x.std(ddof=1)) * abs(scale) / math.sqrt(n) if n > 1 else 0.0
        return cls(mean, se, n, seed)

    @classmethod
    def exact(cls, value: float) -> "McEstimate":
        return cls(float(value), 0.0, 0, None)

    def to_dict(self) -> dict:
        return {"value": self.value, "se": self.se, "n": self.n}

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.value - target) <= k * self.se


def combined_se(*ses: float) -> float:
    return math.sqrt(sum(s * s for s in ses))

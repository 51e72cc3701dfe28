"""Exact distances between an empirical sample and the standard normal, and rate fits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import DegenerateVarianceError, InvalidArgumentError

_INV_SQRT_2PI = 1.0 / math.sqrt(2 * math.pi)
CSV_FIELDS = ("scale", "d_w", "d_k", "bound_w", "bound_k", "reps", "seed")


def standardize(samples, mean: float | None = None, sd: float | None = None) -> np.ndarray:
    """``(x - mean) / sd``; with no moments given the sample mean and unbiased SD are used."""
    x = np.asarray(samples, dtype=float)
    if mean is None and sd is None:
        if x.size < 2:
            raise InvalidArgumentError("empirical standardization needs >= 2 samples")
        mean = float(x.mean())
        sd = float(x.std(ddof=1))
    elif mean is None or sd is None:
        raise InvalidArgumentError("give both mean and sd, or neither")
    if not sd > 0:
        raise DegenerateVarianceError("standard deviation is zero")
    return (x - mean) / sd


def _sorted(x) -> np.ndarray:
    x = np.sort(np.asarray(x, dtype=float).ravel())
    if x.size == 0:
        raise InvalidArgumentError("empty sample")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("sample contains non-finite values")
    return x


def kolmogorov_distance(samples) -> float:
    """``sup_x |F_m(x) - Phi(x)|``, attained at a jump of the empirical CDF."""
    x = _sorted(samples)
    m = x.size
    phi = ndtr(x)
    i = np.arange(1, m + 1)
    return float(max(np.max(i / m - phi), np.max(phi - (i - 1) / m)))


def _pdf(x):
    return np.exp(-0.5 * x * x) * _INV_SQRT_2PI


def _prim(x):
    """Antiderivative of Phi vanishing at minus infinity."""
    return x * ndtr(x) + _pdf(x)


def wasserstein1_distance(samples) -> float:
    """``integral |F_m - Phi| dx`` evaluated piecewise between order statistics."""
    x = _sorted(samples)
    m = x.size
    left = float(_prim(x[0]))
    right = float(_pdf(x[-1]) - x[-1] * ndtr(-x[-1]))
    if m == 1:
        return left + right
    a, b = x[:-1], x[1:]
    c = np.arange(1, m) / m
    # Phi crosses the level c once, at ndtri(c); split each piece there
    root = np.clip(ndtri(c), a, b)
    ga, gb, gr = _prim(a), _prim(b), _prim(root)
    below = c * (root - a) - (gr - ga)  # c >= Phi on [a, root]
    above = (gb - gr) - c * (b - root)  # Phi >= c on [root, b]
    return left + right + float(np.sum(np.abs(below) + np.abs(above)))


@dataclass(frozen=True)
class DistanceRow:
    scale: float
    d_w: float
    d_k: float
    bound_w: float
    bound_k: float
    reps: int
    seed: int

    def __post_init__(self):
        if self.d_w < 0 or not 0 <= self.d_k <= 1:
            raise InvalidArgumentError("distances out of range")


@dataclass
class DistanceTable:
    rows: list[DistanceRow] = field(default_factory=list)

    def append(self, row: DistanceRow) -> None:
        self.rows.append(row)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_FIELDS)
            for r in self.rows:
                w.writerow([fmt(getattr(r, f)) for f in CSV_FIELDS])

    @classmethod
    def read_csv(cls, path) -> "DistanceTable":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([DistanceRow(float(r["scale"]), float(r["d_w"]), float(r["d_k"]), float(r["bound_w"]),
                                float(r["bound_k"]), int(r["reps"]), int(r["seed"])) for r in rows])


def fmt(v) -> str:
    """Shortest round-trip decimal for floats; plain text otherwise."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def rate_fit(table: DistanceTable | list, column: str = "d_w") -> tuple[float, float]:
    """Least-squares slope and intercept of ``log(distance)`` against ``log(scale)``."""
    rows = table.rows if isinstance(table, DistanceTable) else list(table)
    if len(rows) < 2:
        raise InvalidArgumentError("need at least two rows")
    if isinstance(rows[0], DistanceRow):
        s = np.array([r.scale for r in rows], dtype=float)
        v = np.array([getattr(r, column) for r in rows], dtype=float)
    else:
        s, v = (np.array(c, dtype=float) for c in zip(*rows))
    if np.any(v <= 0) or np.any(s <= 0):
        raise InvalidArgumentError("rate fit needs positive scales and distances")
    slope, intercept = np.polyfit(np.log(s), np.log(v), 1)
    return float(slope), float(intercept)

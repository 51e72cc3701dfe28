"""Closed-form avoidance/Mehler moments with Monte Carlo cross-checks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .geometry import Ball, Window, region_volumes, two_ball_intersection_volume
from .malliavin import mehler_integral
from .mc import McEstimate
from .rng import RngStream

SERIES_CUTOFF = 1e-4
BLOCK = 4096


@dataclass(frozen=True)
class MassConfig:
    """Expected point counts of two sets and of their intersection."""

    mA: float
    mB: float
    mAB: float

    def __post_init__(self):
        if min(self.mA, self.mB, self.mAB) < 0:
            raise InvalidArgumentError("masses must be nonnegative")
        if self.mAB > min(self.mA, self.mB) * (1 + 1e-12):
            raise InvalidArgumentError("intersection mass exceeds a set mass")

    @property
    def union(self) -> float:
        return self.mA + self.mB - self.mAB


def _one_minus_exp_over(x: float) -> float:
    """``(1 - exp(-x)) / x`` with the removable singularity at 0."""
    if x < SERIES_CUTOFF:
        return 1 - x / 2 + x * x / 6 - x**3 / 24
    return -math.expm1(-x) / x


def avoid_mehler_expectation(cfg: MassConfig) -> float:
    """``E[1(eta(A)=0) * mehler(eta(B), mu(B))]``."""
    return math.exp(-cfg.union) * _one_minus_exp_over(cfg.mAB)


def covariance_upper_bound(union_mass: float, overlap: bool) -> float:
    if union_mass < 0:
        raise InvalidArgumentError("union mass must be >= 0")
    return math.exp(-union_mass) if overlap else 0.0


def _balls_window(balls: list[Ball]) -> Window:
    c = np.array([b.center for b in balls])
    r = np.array([b.radius for b in balls])
    lo = (c - r[:, None]).min(axis=0)
    hi = (c + r[:, None]).max(axis=0)
    hi = np.where(hi > lo, hi, lo + 1.0)
    return Window(tuple(lo), tuple(hi))


def _pair_mass(a: Ball, b: Ball, scale: float) -> MassConfig:
    d = a.dimension
    dist = float(np.linalg.norm(np.subtract(a.center, b.center)))
    inter = float(two_ball_intersection_volume(d, a.radius, b.radius, dist))
    return MassConfig(scale * a.volume(), scale * b.volume(), scale * inter)


def _counts(balls: list[Ball], scale: float, reps: int, stream: RngStream) -> np.ndarray:
    """Poisson point counts in each ball, ``(reps, len(balls))``, simulated on a covering window.

    Replicates are generated in fixed blocks, block ``b`` on ``stream.child(b)``.
    """
    win = _balls_window(balls)
    d = win.dimension
    centers = np.array([b.center for b in balls])
    r2 = np.array([b.radius for b in balls]) ** 2
    mean = scale * win.volume()
    out = np.zeros((reps, len(balls)), dtype=np.int64)
    for b, start in enumerate(range(0, reps, BLOCK)):
        m = min(BLOCK, reps - start)
        rng = stream.child(b).generator()
        n = rng.poisson(mean, m)
        pts = win.lo + rng.random((int(n.sum()), d)) * win.sides
        owner = np.repeat(np.arange(m), n)
        inside = ((pts[:, None, :] - centers[None]) ** 2).sum(axis=2) < r2
        for j in range(len(balls)):
            out[start:start + m, j] = np.bincount(owner[inside[:, j]], minlength=m)
    return out


def _weighted_indicator(counts_a, counts_b, mass_b):
    return (counts_a == 0) * mehler_integral(counts_b, mass_b)


def mc_check_moment(A: Ball, B: Ball, scale: float, reps: int, stream: RngStream):
    """Simulated ``1(eta(A)=0) * mehler(eta(B), scale*l(B))`` against the closed form."""
    if not scale > 0 or reps < 2:
        raise InvalidArgumentError("need scale > 0 and reps >= 2")
    counts = _counts([A, B], scale, reps, stream)
    vals = _weighted_indicator(counts[:, 0], counts[:, 1], scale * B.volume())
    closed = avoid_mehler_expectation(_pair_mass(A, B, scale))
    return McEstimate.from_samples(vals, stream.master_seed), closed


def jackknife_covariance(x, y) -> tuple[float, float]:
    """Unbiased sample covariance and its leave-one-out jackknife standard error."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    if n < 3:
        raise InvalidArgumentError("need at least 3 samples")
    cov = float(np.cov(x, y, ddof=1)[0, 1])
    xc = x - x.mean()
    yc = y - y.mean()
    sxy = float((xc * yc).sum())
    # leave-one-out covariances in closed form (centred sums)
    loo = (sxy - xc * yc * n / (n - 1)) / (n - 2)
    se = math.sqrt((n - 1) / n * float(((loo - loo.mean()) ** 2).sum()))
    return cov, se


def _overlap(first: list[Ball], second: list[Ball]) -> bool:
    for a in first:
        for b in second:
            gap = float(np.linalg.norm(np.subtract(a.center, b.center)))
            if a.radius > 0 and b.radius > 0 and gap < a.radius + b.radius:
                return True
    return False


def union_volume(balls: list[Ball], stream: RngStream, inner: int = 1 << 18) -> float:
    c = np.array([b.center for b in balls])[None]
    r = np.array([b.radius for b in balls])[None]
    return float(region_volumes(c, r, "union", stream.generator(), inner)[0])


def mc_check_covariance(A: Ball, B: Ball, C: Ball, D: Ball, scale: float, reps: int, stream: RngStream):
    """Covariance of the two weighted indicators and the overlap-gated bound."""
    if not scale > 0 or reps < 3:
        raise InvalidArgumentError("need scale > 0 and reps >= 3")
    counts = _counts([A, B, C, D], scale, reps, stream.child(0))
    x = _weighted_indicator(counts[:, 0], counts[:, 1], scale * B.volume())
    y = _weighted_indicator(counts[:, 2], counts[:, 3], scale * D.volume())
    cov, se = jackknife_covariance(x, y)
    union = scale * union_volume([A, B, C, D], stream.child(1))
    bound = covariance_upper_bound(union, _overlap([A, B], [C, D]))
    return McEstimate(cov, se, reps, stream.master_seed), bound

"""Balls, boxes and the volumes of their intersections and unions.

Two-ball lenses are exact (two spherical caps through the regularized
incomplete beta function).  Regions built from three or more balls are
estimated by hit-or-miss sampling, except on the line where interval
arithmetic is exact and cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import InvalidArgumentError
from .mc import McEstimate
from .rng import RngStream


def unit_ball_volume(d: int) -> float:
    if d < 1:
        raise InvalidArgumentError(f"dimension must be >= 1, got {d}")
    # recurrence omega_d = omega_{d-2} * 2 pi / d keeps omega_1 = 2 exact
    v = 2.0 if d % 2 else 1.0
    for k in range(3 if d % 2 else 2, d + 1, 2):
        v *= 2 * math.pi / k
    return v


def ball_volume(d: int, r: float) -> float:
    if d < 1:
        raise InvalidArgumentError(f"dimension must be >= 1, got {d}")
    if r < 0:
        raise InvalidArgumentError(f"radius must be >= 0, got {r}")
    return unit_ball_volume(d) * r**d


@dataclass(frozen=True)
class Window:
    """Axis-aligned box ``[lower, upper]``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi) or not lo:
            raise InvalidArgumentError("lower and upper must have the same nonzero length")
        if any(a >= b for a, b in zip(lo, hi)):
            raise InvalidArgumentError(f"degenerate window {lo} .. {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, d: int, a: float = 0.0, b: float = 1.0) -> "Window":
        return cls((a,) * d, (b,) * d)

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.upper)

    @property
    def sides(self) -> np.ndarray:
        return self.hi - self.lo

    def volume(self) -> float:
        return float(np.prod(self.sides))

    def inflate(self, r: float) -> "Window":
        return Window(tuple(self.lo - r), tuple(self.hi + r))

    def translate(self, shift) -> "Window":
        shift = np.broadcast_to(np.asarray(shift, dtype=float), (self.dimension,))
        return Window(tuple(self.lo + shift), tuple(self.hi + shift))

    def contains(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, self.dimension)
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=1)

    def distance_to_boundary(self, points) -> np.ndarray:
        """Distance from interior points to the complement of the box."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dimension)
        return np.minimum(pts - self.lo, self.hi - pts).min(axis=1)

    def uniform(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.lo + rng.random((n, self.dimension)) * self.sides

    def covers(self, other: "Window") -> bool:
        return bool(np.all(self.lo <= other.lo) and np.all(self.hi >= other.hi))

    def union_box(self, other: "Window") -> "Window":
        return Window(tuple(np.minimum(self.lo, other.lo)), tuple(np.maximum(self.hi, other.hi)))


@dataclass(frozen=True)
class Ball:
    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in np.atleast_1d(self.center)))
        if self.radius < 0:
            raise InvalidArgumentError(f"radius must be >= 0, got {self.radius}")

    @property
    def dimension(self) -> int:
        return len(self.center)

    def volume(self) -> float:
        return ball_volume(self.dimension, self.radius)


@dataclass(frozen=True)
class ShapeFamily:
    """``s -> Q(s)``: either a fixed ball of radius ``t`` or the ball ``B(0, s)``."""

    kind: str
    t: float = 0.0

    def __post_init__(self):
        if self.kind not in ("fixed-ball", "ball-of-radius-s"):
            raise InvalidArgumentError(f"unknown shape family {self.kind!r}")
        if self.t < 0:
            raise InvalidArgumentError("shape radius must be >= 0")

    @classmethod
    def fixed_ball(cls, t: float) -> "ShapeFamily":
        return cls("fixed-ball", float(t))

    @classmethod
    def ball_of_radius_s(cls) -> "ShapeFamily":
        return cls("ball-of-radius-s")

    def radius(self, s):
        if self.kind == "fixed-ball":
            return np.full_like(np.asarray(s, dtype=float), self.t)
        return np.asarray(s, dtype=float)


@dataclass(frozen=True)
class MarkMeasure:
    """Mark measure: a unit point mass at ``value`` or ``p s^(p-1) ds`` on (0, inf)."""

    kind: str
    value: float = 0.0
    p: float = 1.0

    def __post_init__(self):
        if self.kind not in ("dirac", "power-law"):
            raise InvalidArgumentError(f"unknown mark measure {self.kind!r}")
        if self.kind == "power-law" and not self.p > 0:
            raise InvalidArgumentError(f"power-law exponent must be > 0, got {self.p}")

    @classmethod
    def dirac(cls, value: float = 0.0) -> "MarkMeasure":
        return cls("dirac", float(value))

    @classmethod
    def power_law(cls, p: float) -> "MarkMeasure":
        return cls("power-law", 0.0, float(p))

    @property
    def total_mass(self) -> float:
        return 1.0 if self.kind == "dirac" else math.inf

    def mass_below(self, r):
        """``nu((0, r])`` for mark values."""
        r = np.asarray(r, dtype=float)
        if self.kind == "dirac":
            return (self.value <= r).astype(float)
        return np.where(r > 0, np.maximum(r, 0.0) ** self.p, 0.0)

    def sample_truncated(self, n: int, rng: np.random.Generator, cutoff: float):
        """Marks from the measure restricted to ``(0, cutoff]``; returns ``(s, weight)``.

        Power-law marks use the inverse CDF ``s = cutoff * u**(1/p)`` and carry the
        constant weight ``cutoff**p`` (the restricted mass).
        """
        if self.kind == "dirac":
            return np.full(n, self.value), np.ones(n)
        u = 1.0 - rng.random(n)
        return cutoff * u ** (1.0 / self.p), np.full(n, cutoff**self.p)

    def sample_tilted(self, n: int, rng: np.random.Generator, d: int, rate: float):
        """Importance-sample marks; returns ``(s, weight)`` with ``E[weight g(s)] = int g dnu``.

        Power-law marks are drawn from the density proportional to
        ``p s^(p-1) exp(-rate s^d)``, so ``s^d`` is Gamma(p/d, 1/rate).  The kernels
        this feeds carry a factor ``exp(-omega_d max s^d)``, which dominates the
        weights as long as ``rate * (#marks) < omega_d``.
        """
        if self.kind == "dirac":
            return np.full(n, self.value), np.ones(n)
        if not rate > 0:
            raise InvalidArgumentError("tilt rate must be > 0")
        shape = self.p / d
        g = rng.gamma(shape, 1.0 / rate, size=n)
        s = g ** (1.0 / d)
        norm = math.gamma(1.0 + shape) * rate ** (-shape)
        return s, norm * np.exp(rate * g)

    def truncation_radius(self, d: int, rel_tol: float = 1e-6) -> float:
        """Mark cutoff ``S`` whose neglected tail under ``exp(-omega_d s^d / 2)`` is below ``rel_tol``."""
        if self.kind == "dirac":
            return self.value
        c = unit_ball_volume(d) / 2.0
        return float((special.gammainccinv(self.p / d, rel_tol) / c) ** (1.0 / d))


def cap_volume(d: int, r, h):
    """Volume of the cap of height ``h`` (0 <= h <= 2r) cut from a ball of radius ``r``."""
    r = np.asarray(r, dtype=float)
    h = np.clip(np.asarray(h, dtype=float), 0.0, 2 * r)
    full = unit_ball_volume(d) * r**d
    small = np.minimum(h, 2 * r - h)
    with np.errstate(invalid="ignore", divide="ignore"):
        x = np.where(r > 0, (2 * r * small - small**2) / np.where(r > 0, r**2, 1.0), 0.0)
    half = 0.5 * full * special.betainc((d + 1) / 2.0, 0.5, np.clip(x, 0.0, 1.0))
    return np.where(h <= r, half, full - half)


def two_ball_intersection_volume(d: int, r1, r2, dist):
    """Exact volume of ``B(0, r1) ∩ B(dist e1, r2)``; vectorized over arguments."""
    if d < 1:
        raise InvalidArgumentError(f"dimension must be >= 1, got {d}")
    r1, r2, dist = np.broadcast_arrays(
        np.asarray(r1, dtype=float), np.asarray(r2, dtype=float), np.asarray(dist, dtype=float)
    )
    if np.any(r1 < 0) or np.any(r2 < 0) or np.any(dist < 0):
        raise InvalidArgumentError("radii and distance must be nonnegative")
    omega = unit_ball_volume(d)
    out = np.zeros(r1.shape)
    nested = dist <= np.abs(r1 - r2)
    out[nested] = omega * np.minimum(r1, r2)[nested] ** d
    lens = (~nested) & (dist < r1 + r2)
    if np.any(lens):
        a, b, c = r1[lens], r2[lens], dist[lens]
        x1 = (c**2 + a**2 - b**2) / (2 * c)
        out[lens] = cap_volume(d, a, a - x1) + cap_volume(d, b, b - (c - x1))
    out[(r1 == 0) | (r2 == 0)] = 0.0
    return out if out.ndim else float(out)


def sample_in_ball(rng: np.random.Generator, radius, d: int) -> np.ndarray:
    """Uniform points in ``B(0, radius[i])``, one per entry of ``radius``."""
    radius = np.asarray(radius, dtype=float)
    n = radius.size
    if d == 1:
        return ((2 * rng.random(n) - 1) * radius)[:, None]
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * (radius * rng.random(n) ** (1.0 / d))[:, None]


def _interval_union_length(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Total length of the union of intervals ``[lo[b, i], hi[b, i]]`` per row ``b``."""
    order = np.argsort(lo, axis=1)
    lo = np.take_along_axis(lo, order, axis=1)
    hi = np.take_along_axis(hi, order, axis=1)
    total = np.zeros(lo.shape[0])
    reach = np.full(lo.shape[0], -np.inf)
    for i in range(lo.shape[1]):
        total += np.maximum(0.0, hi[:, i] - np.maximum(lo[:, i], reach))
        reach = np.maximum(reach, hi[:, i])
    return total


def region_volumes(
    centers: np.ndarray,
    radii: np.ndarray,
    combinator: str,
    rng: np.random.Generator | None = None,
    inner: int = 4096,
) -> np.ndarray:
    """Volumes of the union or intersection of ``k`` balls for a batch of configurations.

    ``centers`` has shape ``(B, k, d)`` and ``radii`` ``(B, k)``.  Exact for
    ``d == 1`` and for ``k <= 2``; otherwise hit-or-miss with ``inner`` samples
    per configuration drawn from ``rng``.
    """
    centers = np.asarray(centers, dtype=float)
    radii = np.asarray(radii, dtype=float)
    nb, k, d = centers.shape
    if combinator not in ("union", "intersection"):
        raise InvalidArgumentError(f"unknown combinator {combinator!r}")
    if d == 1:
        lo = centers[..., 0] - radii
        hi = centers[..., 0] + radii
        if combinator == "intersection":
            out = np.maximum(0.0, hi.min(axis=1) - lo.max(axis=1))
            out[np.any(radii == 0, axis=1)] = 0.0
            return out
        return _interval_union_length(lo, hi)
    omega = unit_ball_volume(d)
    if k == 1:
        return omega * radii[:, 0] ** d
    if k == 2:
        dist = np.linalg.norm(centers[:, 0] - centers[:, 1], axis=1)
        lens = two_ball_intersection_volume(d, radii[:, 0], radii[:, 1], dist)
        if combinator == "intersection":
            return np.atleast_1d(lens)
        return omega * (radii[:, 0] ** d + radii[:, 1] ** d) - lens
    if rng is None:
        raise InvalidArgumentError("an rng is required for regions of three or more balls")
    out = np.zeros(nb)
    if combinator == "intersection":
        live = ~np.any(radii == 0, axis=1)
        # axis box of the smallest ball
        j = np.argmin(radii, axis=1)
        c0 = centers[np.arange(nb), j]
        r0 = radii[np.arange(nb), j]
        box_lo, box_hi = c0 - r0[:, None], c0 + r0[:, None]
    else:
        live = np.any(radii > 0, axis=1)
        r_eff = np.where(radii > 0, radii, -np.inf)
        box_lo = np.where(radii[..., None] > 0, centers - radii[..., None], np.inf).min(axis=1)
        box_hi = np.where(r_eff[..., None] > -np.inf, centers + radii[..., None], -np.inf).max(axis=1)
    idx = np.flatnonzero(live)
    chunk = max(1, (1 << 21) // (inner * d))
    for start in range(0, idx.size, chunk):
        sel = idx[start:start + chunk]
        lo, hi = box_lo[sel], box_hi[sel]
        pts = lo[:, None, :] + rng.random((sel.size, inner, d)) * (hi - lo)[:, None, :]
        diff = pts[:, :, None, :] - centers[sel][:, None, :, :]
        inside = np.einsum("bikd,bikd->bik", diff, diff) < radii[sel][:, None, :] ** 2
        hit = inside.all(axis=2) if combinator == "intersection" else inside.any(axis=2)
        out[sel] = hit.mean(axis=1) * np.prod(hi - lo, axis=1)
    return out


def k_region_volume(balls: list[Ball], combinator: str, budget: int, stream: RngStream) -> McEstimate:
    """Volume of the union or intersection of ``balls``.

    One or two balls are handled exactly (SE 0).  Otherwise hit-or-miss over the
    bounding box of the union, or of the smallest ball for intersections.
    """
    if not balls:
        raise InvalidArgumentError("empty ball list")
    if combinator not in ("union", "intersection"):
        raise InvalidArgumentError(f"unknown combinator {combinator!r}")
    if budget < 1:
        raise InvalidArgumentError("budget must be >= 1")
    d = balls[0].dimension
    centers = np.array([b.center for b in balls])
    radii = np.array([b.radius for b in balls])
    if len(balls) <= 2:
        v = region_volumes(centers[None], radii[None], combinator)[0]
        return McEstimate.exact(v)
    if combinator == "intersection":
        if np.any(radii == 0):
            return McEstimate.exact(0.0)
        j = int(np.argmin(radii))
        lo, hi = centers[j] - radii[j], centers[j] + radii[j]
    else:
        keep = radii > 0
        if not keep.any():
            return McEstimate.exact(0.0)
        centers, radii = centers[keep], radii[keep]
        lo = (centers - radii[:, None]).min(axis=0)
        hi = (centers + radii[:, None]).max(axis=0)
    box = float(np.prod(hi - lo))
    rng = stream.generator()
    hits = 0
    chunk = 1 << 16
    for start in range(0, budget, chunk):
        m = min(chunk, budget - start)
        pts = lo + rng.random((m, d)) * (hi - lo)
        d2 = ((pts[:, None, :] - centers[None]) ** 2).sum(axis=2)
        inside = d2 < radii**2
        hit = inside.all(axis=1) if combinator == "intersection" else inside.any(axis=1)
        hits += int(hit.sum())
    p = hits / budget
    se = math.sqrt(p * (1 - p) / budget) * box
    return McEstimate(p * box, se, budget, stream.master_seed)


def ball_box_volume(centers: np.ndarray, radii: np.ndarray, box: Window, rng=None, inner: int = 4096):
    """Volume of ``B(c_i, r_i) ∩ box`` for each row; exact on the line or when the ball is inside."""
    centers = np.asarray(centers, dtype=float).reshape(-1, box.dimension)
    radii = np.asarray(radii, dtype=float).reshape(-1)
    d = box.dimension
    if d == 1:
        lo = np.maximum(centers[:, 0] - radii, box.lower[0])
        hi = np.minimum(centers[:, 0] + radii, box.upper[0])
        return np.maximum(0.0, hi - lo)
    out = unit_ball_volume(d) * radii**d
    inside = np.all((centers - radii[:, None] >= box.lo) & (centers + radii[:, None] <= box.hi), axis=1)
    todo = np.flatnonzero(~inside & (radii > 0))
    if todo.size:
        if rng is None:
            raise InvalidArgumentError("an rng is required for balls crossing the box boundary")
        for i in todo:
            lo = np.maximum(centers[i] - radii[i], box.lo)
            hi = np.minimum(centers[i] + radii[i], box.hi)
            if np.any(hi <= lo):
                out[i] = 0.0
                continue
            pts = lo + rng.random((inner, d)) * (hi - lo)
            hit = ((pts - centers[i]) ** 2).sum(axis=1) < radii[i] ** 2
            out[i] = hit.mean() * np.prod(hi - lo)
    return out

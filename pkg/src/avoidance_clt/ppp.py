"""Point pattern sampling and a uniform-grid spatial index."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import ContractViolationError, EmptyPatternError, InvalidArgumentError
from .geometry import Ball, Window
from .rng import RngStream

_BRUTE_MAX = 32
_CHUNK = 1 << 15


@dataclass(frozen=True, eq=False)
class PointPattern:
    points: np.ndarray
    window: Window
    seed: int | None = field(default=None, compare=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, self.window.dimension)
        if pts.size and not np.all(self.window.contains(pts)):
            raise InvalidArgumentError("pattern points must lie in the window")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def dimension(self) -> int:
        return self.window.dimension

    def __len__(self) -> int:
        return self.points.shape[0]

    @cached_property
    def index(self) -> "GridIndex":
        return GridIndex(self)

    def add_points(self, extra) -> "PointPattern":
        """Superpose extra points, growing the window if needed."""
        extra = np.asarray(extra, dtype=float).reshape(-1, self.dimension)
        window = self.window
        if extra.size and not np.all(window.contains(extra)):
            box = Window(tuple(extra.min(axis=0) - 1e-12), tuple(extra.max(axis=0) + 1e-12))
            window = window.union_box(box)
        return PointPattern(np.vstack([self.points, extra]), window, self.seed)

    def superpose(self, other: "PointPattern") -> "PointPattern":
        return PointPattern(np.vstack([self.points, other.points]), self.window.union_box(other.window))

    def restrict(self, window: Window) -> "PointPattern":
        return PointPattern(self.points[window.contains(self.points)], window, self.seed)


class GridIndex:
    """Points bucketed into a regular grid of cubic cells (CSR layout).

    Queries may lie anywhere in space; cells outside the grid are empty.
    """

    def __init__(self, pattern: PointPattern, side: float | None = None):
        w = pattern.window
        n = len(pattern)
        if side is None:
            side = (w.volume() / max(n, 1)) ** (1.0 / w.dimension)
        if not side > 0:
            raise InvalidArgumentError("cell side must be > 0")
        self.side = float(side)
        self.points = pattern.points
        self.dimension = w.dimension
        self.origin = w.lo
        self.shape = np.maximum(1, np.ceil(w.sides / self.side).astype(np.int64))
        cells = self._cell_coords(self.points)
        cells = np.clip(cells, 0, self.shape - 1)
        flat = np.ravel_multi_index(cells.T, self.shape) if n else np.zeros(0, np.int64)
        self.order = np.argsort(flat, kind="stable")
        ncell = int(np.prod(self.shape))
        self.counts = np.bincount(flat, minlength=ncell)
        self.starts = np.concatenate([[0], np.cumsum(self.counts)[:-1]])
        # on the line, sorted coordinates answer counts and nearest queries directly
        self.sorted_1d = np.sort(self.points[:, 0]) if self.dimension == 1 else None

    def _cell_coords(self, pts: np.ndarray) -> np.ndarray:
        return np.floor((pts - self.origin) / self.side).astype(np.int64)

    def bucket(self, cell) -> np.ndarray:
        """Point indices stored in the cell with integer coordinates ``cell``."""
        flat = np.ravel_multi_index(tuple(np.asarray(cell, dtype=np.int64)), self.shape)
        s = self.starts[flat]
        return self.order[s:s + self.counts[flat]]

    def _pairs(self, qidx: np.ndarray, cells: np.ndarray):
        """Expand (query, cell) pairs into (query, point) pairs."""
        ok = np.all((cells >= 0) & (cells < self.shape), axis=1)
        qidx, cells = qidx[ok], cells[ok]
        if not qidx.size:
            return qidx, qidx
        flat = np.ravel_multi_index(cells.T, self.shape)
        cnt = self.counts[flat]
        total = int(cnt.sum())
        rep_q = np.repeat(qidx, cnt)
        first = np.repeat(self.starts[flat] - np.cumsum(cnt) + cnt, cnt)
        pidx = self.order[first + np.arange(total)]
        return rep_q, pidx

    def _offsets(self, k: int, shell: bool) -> np.ndarray:
        rng = range(-k, k + 1)
        offs = np.array(list(itertools.product(rng, repeat=self.dimension)), dtype=np.int64)
        if shell and k > 0:
            offs = offs[np.abs(offs).max(axis=1) == k]
        return offs

    def pairs_within(self, centers, radii) -> tuple[np.ndarray, np.ndarray]:
        """All ``(query, point)`` index pairs with distance strictly below the query radius."""
        q = np.asarray(centers, dtype=float).reshape(-1, self.dimension)
        r = np.broadcast_to(np.asarray(radii, dtype=float), (q.shape[0],))
        out_q, out_p = [], []
        npts = self.points.shape[0]
        if not npts or not q.shape[0]:
            return np.zeros(0, np.int64), np.zeros(0, np.int64)
        if npts <= _BRUTE_MAX:
            for s in range(0, q.shape[0], _CHUNK):
                d2 = ((q[s:s + _CHUNK, None, :] - self.points[None]) ** 2).sum(axis=2)
                qi, pi = np.nonzero(d2 < r[s:s + _CHUNK, None] ** 2)
                out_q.append(qi + s)
                out_p.append(pi)
            return np.concatenate(out_q), np.concatenate(out_p)
        span = np.ceil(r / self.side).astype(np.int64)
        qcell = self._cell_coords(q)
        for k in np.unique(span[r > 0]):
            offs = self._offsets(int(k), shell=False)
            sel = np.flatnonzero((span == k) & (r > 0))
            step = max(1, _CHUNK // len(offs))
            for s in range(0, sel.size, step):
                part = sel[s:s + step]
                qi = np.repeat(part, len(offs))
                cells = qcell[qi] + np.tile(offs, (part.size, 1))
                # skip cells that cannot meet the ball
                lo = self.origin + cells * self.side
                gap = np.maximum(0.0, np.maximum(lo - q[qi], q[qi] - lo - self.side))
                near = (gap**2).sum(axis=1) < r[qi] ** 2
                rq, pi = self._pairs(qi[near], cells[near])
                d2 = ((q[rq] - self.points[pi]) ** 2).sum(axis=1)
                hit = d2 < r[rq] ** 2
                out_q.append(rq[hit])
                out_p.append(pi[hit])
        if not out_q:
            return np.zeros(0, np.int64), np.zeros(0, np.int64)
        return np.concatenate(out_q), np.concatenate(out_p)

    def count_in_balls(self, centers, radii) -> np.ndarray:
        """Number of points strictly closer than ``radii[i]`` to ``centers[i]``."""
        q = np.asarray(centers, dtype=float).reshape(-1, self.dimension)
        if self.sorted_1d is not None:
            r = np.broadcast_to(np.asarray(radii, dtype=float), (q.shape[0],))
            hi = np.searchsorted(self.sorted_1d, q[:, 0] + r, side="left")
            lo = np.searchsorted(self.sorted_1d, q[:, 0] - r, side="right")
            return np.maximum(hi - lo, 0).astype(np.int64)
        qi, _ = self.pairs_within(q, radii)
        return np.bincount(qi, minlength=q.shape[0]).astype(np.int64)

    def nearest_distances(self, queries) -> np.ndarray:
        """Distance from each query to its nearest point (expanding-ring search)."""
        q = np.asarray(queries, dtype=float).reshape(-1, self.dimension)
        npts = self.points.shape[0]
        if npts == 0:
            raise EmptyPatternError("nearest distance requested from an empty pattern")
        if self.sorted_1d is not None:
            z = self.sorted_1d
            j = np.searchsorted(z, q[:, 0])
            left = np.abs(q[:, 0] - z[np.maximum(j - 1, 0)])
            right = np.abs(z[np.minimum(j, npts - 1)] - q[:, 0])
            return np.minimum(left, right)
        best = np.full(q.shape[0], np.inf)
        if npts <= _BRUTE_MAX:
            qt = np.ascontiguousarray(q.T)
            for p in self.points:
                d2 = (qt[0] - p[0]) ** 2
                for k in range(1, self.dimension):
                    d2 += (qt[k] - p[k]) ** 2
                np.minimum(best, d2, out=best)
            return np.sqrt(best)
        qcell = self._cell_coords(q)
        # ring index beyond which every grid cell has been visited
        far = np.maximum(np.abs(qcell), np.abs(qcell - self.shape + 1)).max(axis=1)
        todo = np.arange(q.shape[0])
        k = 0
        while todo.size:
            offs = self._offsets(k, shell=True)
            step = max(1, _CHUNK // len(offs))
            for s in range(0, todo.size, step):
                part = todo[s:s + step]
                qi = np.repeat(part, len(offs))
                cells = qcell[qi] + np.tile(offs, (part.size, 1))
                rq, pi = self._pairs(qi, cells)
                if rq.size:
                    d2 = ((q[rq] - self.points[pi]) ** 2).sum(axis=1)
                    # rq is sorted, so reduce over runs of equal query index
                    heads = np.flatnonzero(np.r_[True, rq[1:] != rq[:-1]])
                    run_min = np.sqrt(np.minimum.reduceat(d2, heads))
                    qh = rq[heads]
                    best[qh] = np.minimum(best[qh], run_min)
            done = (best[todo] <= k * self.side) | (far[todo] <= k)
            todo = todo[~done]
            k += 1
        return best

    def nearest_brute(self, queries) -> np.ndarray:
        q = np.asarray(queries, dtype=float).reshape(-1, self.dimension)
        if not self.points.shape[0]:
            raise EmptyPatternError("nearest distance requested from an empty pattern")
        d2 = ((q[:, None, :] - self.points[None]) ** 2).sum(axis=2)
        return np.sqrt(d2.min(axis=1))


def sample_homogeneous(window: Window, intensity: float, stream: RngStream) -> PointPattern:
    if not intensity > 0 or not math.isfinite(intensity):
        raise InvalidArgumentError(f"intensity must be > 0, got {intensity}")
    rng = stream.generator()
    n = int(rng.poisson(intensity * window.volume()))
    return PointPattern(window.uniform(n, rng), window, stream.master_seed)


def sample_binomial(window: Window, n: int, stream: RngStream) -> PointPattern:
    """``n`` i.i.d. uniform points; the first ``k`` points do not depend on ``n``."""
    if n < 0:
        raise InvalidArgumentError(f"n must be >= 0, got {n}")
    rng = stream.generator()
    return PointPattern(window.uniform(int(n), rng), window, stream.master_seed)


def sample_thinned(
    window: Window,
    intensity_max: float,
    intensity_fn: Callable[[np.ndarray], np.ndarray],
    stream: RngStream,
) -> PointPattern:
    """Nonhomogeneous Poisson pattern by independent thinning.

    ``intensity_fn`` is called once with an ``(n, d)`` array and must return
    values in ``[0, intensity_max]``.
    """
    base = sample_homogeneous(window, intensity_max, stream.child(0))
    pts = base.points
    if not len(pts):
        return base
    vals = np.broadcast_to(np.asarray(intensity_fn(pts), dtype=float), (len(pts),))
    if np.any(vals > intensity_max * (1 + 1e-12)) or np.any(vals < 0) or np.any(np.isnan(vals)):
        raise ContractViolationError("intensity_fn left [0, intensity_max] during thinning")
    u = stream.child(1).generator().random(len(pts))
    return PointPattern(pts[u * intensity_max < vals], window, stream.master_seed)


def count_in_ball(pattern: PointPattern, index: GridIndex, ball: Ball) -> int:
    return int(index.count_in_balls(np.array(ball.center)[None], [ball.radius])[0])


def nearest_distance(pattern: PointPattern, index: GridIndex, x) -> float:
    if not len(pattern):
        raise EmptyPatternError("nearest distance requested from an empty pattern")
    return float(index.nearest_distances(np.asarray(x, dtype=float)[None])[0])


def write_csv(pattern: PointPattern, path, seed: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dim", "seed"])
        w.writerow([pattern.dimension, seed])
        for p in pattern.points:
            w.writerow([repr(float(v)) for v in p])


def read_csv(path) -> tuple[np.ndarray, int, int]:
    """Return ``(points, dim, seed)`` from a point dump."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["dim", "seed"]:
        raise InvalidArgumentError("not a point dump: missing dim,seed header")
    dim, seed = int(rows[1][0]), int(rows[1][1])
    pts = np.array([[float(v) for v in r] for r in rows[2:]], dtype=float).reshape(-1, dim)
    return pts, dim, seed

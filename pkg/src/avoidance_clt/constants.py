"""Monte Carlo evaluation of the variance and normal-approximation constants.

All kernels are written at unit scale with the first shape centred at the
origin.  Free centres are sampled uniformly in balls that contain the support
of the kernel given the sampled marks, so each estimate is an unbiased
importance-sampling average (weights: ball volumes times mark weights).
Power-law marks are drawn from a tilted proposal whose weights are dominated
by the ``exp(-volume of union)`` factor present in every kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .errors import DegenerateVarianceError, InvalidArgumentError, OutOfRegimeError, OutOfScopeError
from .functionals import ModelSpec
from .geometry import ball_box_volume, region_volumes, sample_in_ball, two_ball_intersection_volume, unit_ball_volume
from .mc import McEstimate
from .parallel import run_chunked
from .rng import RngStream

CHUNK = 1 << 16
INNER = 4096
C2_KINDS = ("a", "b", "c", "d", "e")


def _marks(model: ModelSpec, k: int, n: int, rng: np.random.Generator):
    """Shape radii ``(n, k)`` and the product of mark weights ``(n,)``."""
    d = model.dimension
    r0 = model.fixed_radius
    if r0 is not None:
        return np.full((n, k), float(r0)), np.full(n, model.mark_mass**k)
    rate = unit_ball_volume(d) / (2 * k)
    radii = np.empty((n, k))
    weight = np.ones(n)
    for i in range(k):
        s, w = model.marks.sample_tilted(n, rng, d, rate)
        radii[:, i] = model.shapes.radius(s)
        weight *= w
    return radii, weight


def _in_ball(rng, radius, d):
    """Uniform points in ``B(0, radius)`` and the ball volumes (the density inverse)."""
    return sample_in_ball(rng, radius, d), unit_ball_volume(d) * np.asarray(radius) ** d


def _volumes(centers, radii, combinator, rng, live=None):
    out = np.zeros(centers.shape[0])
    if live is None:
        live = np.ones(centers.shape[0], dtype=bool)
    if live.any():
        out[live] = region_volumes(centers[live], radii[live], combinator, rng, INNER)
    return out


def _groups_meet(centers, radii, first, second):
    """Whether some ball of ``first`` meets some ball of ``second`` (open balls)."""
    hit = np.zeros(centers.shape[0], dtype=bool)
    for i in first:
        for j in second:
            gap = np.linalg.norm(centers[:, i] - centers[:, j], axis=1)
            hit |= (gap < radii[:, i] + radii[:, j]) & (radii[:, i] > 0) & (radii[:, j] > 0)
    return hit


# --- kernels: each returns per-sample weighted values ------------------------

def _kernel_c1(model: ModelSpec, n: int, rng: np.random.Generator, scale: float | None):
    d = model.dimension
    radii, w = _marks(model, 2, n, rng)
    reach = radii.sum(axis=1)
    z, vol = _in_ball(rng, reach, d)
    lens = np.atleast_1d(two_ball_intersection_volume(d, radii[:, 0], radii[:, 1], np.linalg.norm(z, axis=1)))
    omega = unit_ball_volume(d)
    both = omega * (radii[:, 0] ** d + radii[:, 1] ** d)
    val = np.exp(-both) * np.expm1(lens) * vol * w * model.domain.volume()
    if scale is not None:
        x = model.domain.uniform(n, rng)
        y = x + scale ** (-1.0 / d) * z
        val = val * model.domain.contains(y)
    return val


def _kernel_a(model, n, rng):
    d = model.dimension
    radii, w = _marks(model, 3, n, rng)
    c = np.zeros((n, 3, d))
    c[:, 1], v1 = _in_ball(rng, radii[:, 0] + radii[:, 1], d)
    c[:, 2], v2 = _in_ball(rng, radii[:, 0] + radii[:, 2], d)
    inter = _volumes(c, radii, "intersection", rng)
    union = _volumes(c, radii, "union", rng, inter > 0)
    return np.exp(-union) * inter * v1 * v2 * w


def _kernel_c(model, n, rng):
    d = model.dimension
    radii, w = _marks(model, 4, n, rng)
    c = np.zeros((n, 4, d))
    vol = np.ones(n)
    for i in (1, 2, 3):
        c[:, i], v = _in_ball(rng, radii[:, 0] + radii[:, i], d)
        vol *= v
    inter = _volumes(c, radii, "intersection", rng)
    union = _volumes(c, radii, "union", rng, inter > 0)
    return np.exp(-union) * inter * vol * w


def _kernel_e(model, n, rng):
    d = model.dimension
    radii, w = _marks(model, 4, n, rng)
    c = np.zeros((n, 4, d))
    c[:, 1], v1 = _in_ball(rng, radii[:, 0] + radii[:, 1], d)
    c[:, 2], v2 = _in_ball(rng, radii[:, 0] + radii[:, 2], d)
    off, v3 = _in_ball(rng, radii[:, 1] + radii[:, 3], d)
    c[:, 3] = c[:, 1] + off
    i012 = _volumes(c[:, :3], radii[:, :3], "intersection", rng)
    i123 = _volumes(c[:, 1:], radii[:, 1:], "intersection", rng, i012 > 0)
    live = (i012 > 0) & (i123 > 0)
    union = _volumes(c, radii, "union", rng, live)
    return np.exp(-union) * i012 * i123 * v1 * v2 * v3 * w


def _kernel_b(model, n, rng):
    d = model.dimension
    radii, w = _marks(model, 4, n, rng)
    c = np.zeros((n, 4, d))
    c[:, 1], v1 = _in_ball(rng, radii[:, 0] + radii[:, 1], d)
    off, v3 = _in_ball(rng, radii[:, 2] + radii[:, 3], d)
    reach01 = np.maximum(radii[:, 0], np.linalg.norm(c[:, 1], axis=1) + radii[:, 1])
    reach23 = np.maximum(radii[:, 2], np.linalg.norm(off, axis=1) + radii[:, 3])
    c[:, 2], v2 = _in_ball(rng, reach01 + reach23, d)
    c[:, 3] = c[:, 2] + off
    i01 = _volumes(c[:, :2], radii[:, :2], "intersection", rng)
    i23 = _volumes(c[:, 2:], radii[:, 2:], "intersection", rng)
    live = (i01 > 0) & (i23 > 0) & _groups_meet(c, radii, (0, 1), (2, 3))
    union = _volumes(c, radii, "union", rng, live)
    return np.where(live, np.exp(-union) * i01 * i23, 0.0) * v1 * v2 * v3 * w


def _kernel_d(model, n, rng):
    d = model.dimension
    radii, w = _marks(model, 6, n, rng)
    c = np.zeros((n, 6, d))
    c[:, 1], v1 = _in_ball(rng, radii[:, 0] + radii[:, 1], d)
    c[:, 2], v2 = _in_ball(rng, radii[:, 0] + radii[:, 2], d)
    off4, v4 = _in_ball(rng, radii[:, 3] + radii[:, 4], d)
    off5, v5 = _in_ball(rng, radii[:, 3] + radii[:, 5], d)
    reach012 = np.maximum.reduce([radii[:, 0],
                                  np.linalg.norm(c[:, 1], axis=1) + radii[:, 1],
                                  np.linalg.norm(c[:, 2], axis=1) + radii[:, 2]])
    reach345 = np.maximum.reduce([radii[:, 3],
                                  np.linalg.norm(off4, axis=1) + radii[:, 4],
                                  np.linalg.norm(off5, axis=1) + radii[:, 5]])
    c[:, 3], v3 = _in_ball(rng, reach012 + reach345, d)
    c[:, 4] = c[:, 3] + off4
    c[:, 5] = c[:, 3] + off5
    i012 = _volumes(c[:, :3], radii[:, :3], "intersection", rng)
    i345 = _volumes(c[:, 3:], radii[:, 3:], "intersection", rng, i012 > 0)
    live = (i012 > 0) & (i345 > 0) & _groups_meet(c, radii, (0, 1, 2), (3, 4, 5))
    union = _volumes(c, radii, "union", rng, live)
    return np.where(live, np.exp(-union) * i012 * i345, 0.0) * v1 * v2 * v3 * v4 * v5 * w


_KERNELS = {"a": _kernel_a, "b": _kernel_b, "c": _kernel_c, "d": _kernel_d, "e": _kernel_e}


def _chunk_values(kernel, master_seed, stream_id, path, budget, indices):
    out = []
    for ci in indices:
        n = min(CHUNK, budget - ci * CHUNK)
        rng = RngStream(master_seed, stream_id, path + (ci,)).generator()
        out.append(kernel(n, rng))
    return out


def _estimate(kernel, budget: int, stream: RngStream, workers: int = 1) -> McEstimate:
    if budget < 2:
        raise InvalidArgumentError("budget must be >= 2")
    nchunks = -(-budget // CHUNK)
    fn = partial(_chunk_values, kernel, stream.master_seed, stream.stream_id, stream.path, budget)
    parts = run_chunked(fn, nchunks, workers, size=1)
    return McEstimate.from_samples(np.concatenate(parts), stream.master_seed)


def _max_radius_zero(model: ModelSpec) -> bool:
    r0 = model.fixed_radius
    return r0 is not None and r0 == 0


def c1_lambda(model: ModelSpec, scale: float, budget: int, stream: RngStream, workers: int = 1) -> McEstimate:
    """``C1(scale) = scale * Var F`` for Poisson input: the variance kernel restricted to pairs inside the domain."""
    if not scale > 0:
        raise InvalidArgumentError("scale must be > 0")
    if _max_radius_zero(model):
        return McEstimate.exact(0.0)
    return _estimate(partial(_c1_wrapped, model, scale), budget, stream, workers)


def c1_limit(model: ModelSpec, budget: int, stream: RngStream, workers: int = 1) -> McEstimate:
    """Large-scale limit ``C1 = l(A) * integral V(z) dz``."""
    if _max_radius_zero(model):
        return McEstimate.exact(0.0)
    return _estimate(partial(_c1_wrapped, model, None), budget, stream, workers)


def _c1_wrapped(model, scale, n, rng):
    return _kernel_c1(model, n, rng, scale)


def _c2_wrapped(kind, model, n, rng):
    return _KERNELS[kind](model, n, rng) * model.domain.volume()


def c2_constant(kind: str, model: ModelSpec, budget: int, stream: RngStream, workers: int = 1) -> McEstimate:
    """One of the higher-order constants ``a`` .. ``e`` (overlap-weighted multi-shape integrals)."""
    if kind not in C2_KINDS:
        raise InvalidArgumentError(f"unknown constant kind {kind!r}")
    if _max_radius_zero(model):
        return McEstimate.exact(0.0)
    return _estimate(partial(_c2_wrapped, kind, model), budget, stream, workers)


def _finite_marks(model: ModelSpec, what: str):
    if not math.isfinite(model.mark_mass) or model.fixed_radius is None:
        raise OutOfScopeError(f"{what} needs a finite mark measure with bounded shapes")


def d1_limit(model: ModelSpec, budget: int, stream: RngStream, workers: int = 1) -> McEstimate:
    """Limit of ``n Var F_n`` for binomial input: ``C1`` minus the squared Poissonization correction."""
    _finite_marks(model, "the binomial variance limit")
    d = model.dimension
    vq = unit_ball_volume(d) * model.fixed_radius**d
    corr = (math.exp(-vq / model.domain.volume()) * vq * model.mark_mass) ** 2
    c1 = c1_limit(model, budget, stream, workers)
    return McEstimate(c1.value - corr, c1.se, c1.n, c1.seed)


def alpha_n(model: ModelSpec, n: int, budget: int, stream: RngStream) -> McEstimate:
    """``integral (1 - b/n)^n b dx dnu`` with ``b = n l(Q_n(x, s) ∩ A) / l(A)``."""
    _finite_marks(model, "alpha_n")
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    dom = model.domain
    vol = dom.volume()
    rho = n ** (-1.0 / model.dimension) * model.fixed_radius
    if rho == 0:
        return McEstimate.exact(0.0)
    rng = stream.generator()
    x = dom.uniform(budget, rng)
    b = n * ball_box_volume(x, np.full(budget, rho), dom, rng) / vol
    vals = (1 - b / n) ** n * b
    return McEstimate.from_samples(vals, stream.master_seed, scale=vol * model.mark_mass)


# --- bounds ------------------------------------------------------------------

@dataclass
class ConstantsReport:
    model: ModelSpec
    scale: float
    c1_lambda: McEstimate
    c1_limit: McEstimate
    c2: dict = field(default_factory=dict)
    d1: McEstimate | None = None
    alpha_n: McEstimate | None = None
    skipped: dict = field(default_factory=dict)

    @property
    def bounds(self) -> dict:
        out = {}
        for name, fn in (("wasserstein", wasserstein_bound), ("kolmogorov", kolmogorov_bound)):
            try:
                out[name] = fn(self, self.scale)
            except (KeyError, DegenerateVarianceError):
                out[name] = float("nan")
        return out

    def to_dict(self) -> dict:
        def enc(v):
            return v.to_dict() if isinstance(v, McEstimate) else v

        out = {"model": self.model.to_dict(), "lambda": self.scale,
               "c1_lambda": enc(self.c1_lambda), "c1_limit": enc(self.c1_limit)}
        for k in C2_KINDS:
            out[f"c2_{k}"] = enc(self.c2[k]) if k in self.c2 else "skipped"
        out["d1"] = enc(self.d1) if self.d1 is not None else "skipped"
        out["alpha_n"] = enc(self.alpha_n) if self.alpha_n is not None else "skipped"
        b = self.bounds
        out["bound_wasserstein"] = b["wasserstein"]
        out["bound_kolmogorov"] = b["kolmogorov"]
        if self.skipped:
            out["skipped"] = dict(self.skipped)
        return out


def _value(x) -> float:
    return x.value if isinstance(x, McEstimate) else float(x)


def _c1_checked(report, scale):
    c1 = _value(report.c1_lambda)
    if not c1 > 0:
        raise DegenerateVarianceError("C1(lambda) is not positive; the functional has no variance")
    if not scale > 0:
        raise InvalidArgumentError("scale must be > 0")
    return c1


def wasserstein_bound(report: ConstantsReport, scale: float) -> float:
    c1 = _c1_checked(report, scale)
    a, b = max(_value(report.c2["a"]), 0.0), max(_value(report.c2["b"]), 0.0)
    return (a / c1**1.5 + math.sqrt(b) / c1) / math.sqrt(scale)


def wasserstein_bound_clean(report: ConstantsReport, scale: float) -> float:
    c1 = _c1_checked(report, scale)
    b, c = max(_value(report.c2["b"]), 0.0), max(_value(report.c2["c"]), 0.0)
    return (math.sqrt(c) + math.sqrt(b)) / c1 / math.sqrt(scale)


def kolmogorov_bound(report: ConstantsReport, scale: float) -> float:
    c1 = _c1_checked(report, scale)
    a, b, c, d, e = (max(_value(report.c2[k]), 0.0) for k in C2_KINDS)
    inner = ((4 + math.sqrt(2 * math.pi)) / 8 * a / math.sqrt(c1) + math.sqrt(b)
             + 0.5 * math.sqrt(d) / (math.sqrt(scale) * math.sqrt(c1)) + math.sqrt(c + 9 * e))
    return inner / (c1 * math.sqrt(scale))


def explicit_germ_constant(d: int, t: float, scale: float) -> float:
    """Closed-form upper constant for the germ-grain rate (valid for ``scale > (2t)^d``)."""
    if d < 1 or not t > 0:
        raise InvalidArgumentError("need d >= 1 and t > 0")
    if scale <= (2 * t) ** d:
        raise OutOfRegimeError(f"scale must exceed (2t)^d = {(2 * t) ** d}")
    omega = unit_ball_volume(d)
    vt = omega * t**d
    num = 8 ** (d / 2) * math.exp(-vt / 2) * (1 + 3 * math.sqrt(omega) * t ** (d / 2))
    den = math.exp(-2 * vt) * (1 - 2 * t / scale ** (1.0 / d)) ** d * vt * math.expm1(omega * (t / 2) ** d)
    return num / den


def constants_report(
    model: ModelSpec,
    scale: float,
    budget: int,
    stream: RngStream,
    n: int | None = None,
    workers: int = 1,
) -> ConstantsReport:
    """Every constant for ``model`` on its own child stream; out-of-scope ones are listed as skipped."""
    rep = ConstantsReport(
        model=model,
        scale=scale,
        c1_lambda=c1_lambda(model, scale, budget, stream.child(0), workers),
        c1_limit=c1_limit(model, budget, stream.child(1), workers),
    )
    for i, k in enumerate(C2_KINDS):
        rep.c2[k] = c2_constant(k, model, budget, stream.child(2 + i), workers)
    try:
        rep.d1 = d1_limit(model, budget, stream.child(1), workers)
    except OutOfScopeError as exc:
        rep.skipped["d1"] = str(exc)
    try:
        rep.alpha_n = alpha_n(model, int(n if n is not None else round(scale)), budget, stream.child(7))
    except (OutOfScopeError, InvalidArgumentError) as exc:
        rep.skipped["alpha_n"] = str(exc)
    return rep

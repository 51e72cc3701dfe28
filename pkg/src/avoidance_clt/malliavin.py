"""Difference and inverse Ornstein-Uhlenbeck operators of avoidance functionals.

For a ball-shaped avoidance functional the add-one-point difference at ``z`` is

    D_z F = -integral over x in A of [M(c nn(x)) - M(c |x - z|)]_+ dx,   c = scale**(1/d),

and the inverse-OU difference integrates the Mehler weight
``mehler_integral(#points in the shape, expected count)`` over shapes that
contain ``z``.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy import special

from .errors import EmptyPatternError, InvalidArgumentError
from .functionals import ModelSpec, QuadratureSpec, avoidance_value
from .geometry import Window, sample_in_ball, unit_ball_volume
from .mc import McEstimate
from .ppp import PointPattern
from .rng import RngStream

_SERIES_TERMS = 60
_TILT = 0.5  # tilt rate of the mark proposal, in units of omega_d


def _mehler_small_a(k: np.ndarray, a: np.ndarray) -> np.ndarray:
    # sum_j (-a)^j / (j! (k + j + 1))
    out = np.zeros_like(a)
    term = np.ones_like(a)
    for j in range(_SERIES_TERMS):
        out += term / (k + j + 1)
        term = term * (-a) / (j + 1)
    return out


def _mehler_recurrence(k: np.ndarray, a: np.ndarray) -> np.ndarray:
    # I(0) = (1 - e^-a)/a, I(j) = (j I(j-1) - e^-a)/a; stable while j < a
    ea = np.exp(-a)
    val = -np.expm1(-a) / a
    out = val.copy()
    kmax = int(k.max()) if k.size else 0
    for j in range(1, kmax + 1):
        val = (j * val - ea) / a
        out = np.where(k == j, val, out)
    return out


def _mehler_large_k(k: np.ndarray, a: np.ndarray) -> np.ndarray:
    # e^-a sum_j a^j k! / (k + j + 1)!, ratio a / (k + j + 2) < 1 when k >= a
    term = 1.0 / (k + 1)
    total = term.copy()
    j = 0
    while True:
        term = term * a / (k + j + 2)
        total += term
        j += 1
        if np.all(term <= 1e-17 * total) or j > 100_000:
            break
    return np.exp(-a) * total


def mehler_integral(k, a):
    """``integral_0^1 t**k exp(-a t) dt`` for integer ``k >= 0`` and ``a >= 0``; vectorized."""
    k_arr, a_arr = np.broadcast_arrays(np.asarray(k), np.asarray(a, dtype=float))
    if np.any(k_arr < 0) or np.any(a_arr < 0):
        raise InvalidArgumentError("mehler_integral needs k >= 0 and a >= 0")
    if k_arr.size > 64 and np.all(a_arr == a_arr.flat[0]):
        # common case: one mass, few distinct counts
        uniq, inv = np.unique(k_arr, return_inverse=True)
        return mehler_integral(uniq, a_arr.flat[0])[inv].reshape(k_arr.shape)
    kf = k_arr.astype(float)
    out = np.empty(kf.shape)
    zero = a_arr == 0
    small = (a_arr > 0) & (a_arr < 1)
    rec = (a_arr >= 1) & (kf < a_arr)
    big = (a_arr >= 1) & ~rec
    out[zero] = 1.0 / (kf[zero] + 1)
    if small.any():
        out[small] = _mehler_small_a(kf[small], a_arr[small])
    if rec.any():
        out[rec] = _mehler_recurrence(kf[rec], a_arr[rec])
    if big.any():
        out[big] = _mehler_large_k(kf[big], a_arr[big])
    return out if out.ndim else float(out)


@lru_cache(maxsize=4096)
def _chaos_scalar(n: int, k: int, a: float) -> float:
    top = min(n, k)
    if n <= 20:
        s = math.fsum((-1) ** j * math.comb(n, j) * math.comb(k, j) * math.factorial(j) * a ** (n - j)
                      for j in range(top + 1))
        return math.exp(-a) * s / math.factorial(n)
    terms = []
    for j in range(top + 1):
        if a == 0 and n - j > 0:
            continue
        logt = (math.lgamma(n + 1) - math.lgamma(n - j + 1) + math.lgamma(k + 1) - math.lgamma(k - j + 1)
                - math.lgamma(j + 1) + ((n - j) * math.log(a) if n > j else 0.0) - a - math.lgamma(n + 1))
        terms.append((-1) ** j * math.exp(logt))
    return math.fsum(terms)


def chaos_term_indicator(n: int, k, a: float):
    """Order-``n`` chaos term of ``1(eta(A) = 0)`` given ``eta(A) = k`` and ``mu(A) = a``.

    ``exp(-a)/n! * sum_j (-1)^j C(n, j) C(k, j) j! a^(n - j)``; vectorized in ``k``.
    """
    if n < 1:
        raise InvalidArgumentError("chaos order must be >= 1")
    if a < 0:
        raise InvalidArgumentError("mass must be >= 0")
    k_arr = np.asarray(k)
    if k_arr.ndim == 0:
        return _chaos_scalar(int(n), int(k_arr), float(a))
    uniq, inv = np.unique(k_arr, return_inverse=True)
    vals = np.array([_chaos_scalar(int(n), int(u), float(a)) for u in uniq])
    return vals[inv].reshape(k_arr.shape)


def chaos_variance_indicator(n: int, a: float) -> float:
    """``E I_n^2 = exp(-2a) a^n / n!``."""
    return math.exp(-2 * a + n * math.log(a) - math.lgamma(n + 1)) if a > 0 else 0.0


def difference_indicator(count: int, z_in_set: bool) -> int:
    """Add-one-point difference of ``1(eta(A) = 0)``: ``-1`` iff the set was empty and gains ``z``."""
    return -1 if (z_in_set and count == 0) else 0


# --- difference operator -----------------------------------------------------

def _neighbours_line(z_sorted: np.ndarray, zq: np.ndarray):
    j = np.searchsorted(z_sorted, zq)
    left = np.where(j > 0, z_sorted[np.maximum(j - 1, 0)], -np.inf)
    right = np.where(j < z_sorted.size, z_sorted[np.minimum(j, z_sorted.size - 1)], np.inf)
    return left, right


def _prim(u, p):
    return np.sign(u) * np.abs(u) ** (p + 1) / (p + 1)


def _diff_line(model: ModelSpec, pattern: PointPattern, zq: np.ndarray, scale: float) -> np.ndarray:
    """Exact ``D_z F`` on the line for many ``z`` (only the two neighbours of ``z`` matter)."""
    z_sorted = np.sort(pattern.points[:, 0])
    a, b = model.domain.lower[0], model.domain.upper[0]
    left, right = _neighbours_line(z_sorted, zq)
    r0 = model.fixed_radius
    if r0 is not None:
        rho = r0 / scale
        lo = np.maximum.reduce([zq - rho, left + rho, np.full_like(zq, a)])
        hi = np.minimum.reduce([zq + rho, right - rho, np.full_like(zq, b)])
        return -model.mark_mass * np.maximum(0.0, hi - lo)
    p = model.p
    # new Voronoi cell of z split by the old bisector of its neighbours
    cell_lo = np.maximum(0.5 * (left + zq), a)
    cell_hi = np.minimum(0.5 * (zq + right), b)
    split = 0.5 * (left + right)
    total = np.zeros_like(zq)
    for nb, lo, hi in ((left, cell_lo, np.minimum(split, cell_hi)),
                       (right, np.maximum(split, cell_lo), cell_hi)):
        ok = (hi > lo) & np.isfinite(nb)
        lo_, hi_, nb_, z_ = lo[ok], hi[ok], nb[ok], zq[ok]
        old = _prim(hi_ - nb_, p) - _prim(lo_ - nb_, p)
        new = _prim(hi_ - z_, p) - _prim(lo_ - z_, p)
        total[ok] += old - new
    return -scale**p * total


def _diff_integrand(model: ModelSpec, pattern: PointPattern, x: np.ndarray, z: np.ndarray, scale: float):
    """``[M(c nn(x)) - M(c |x - z|)]_+`` for paired rows of ``x`` and ``z``, zero off the domain."""
    c = scale ** (1.0 / model.dimension)
    inside = model.domain.contains(x)
    out = np.zeros(len(x))
    if not inside.any():
        return out
    xi = x[inside]
    if len(pattern):
        nn = pattern.index.nearest_distances(xi)
    else:
        nn = np.full(len(xi), np.inf)
    dz = np.linalg.norm(xi - z[inside], axis=1)
    m_nn = model.avoided_mass(c * nn)
    m_dz = model.avoided_mass(c * dz)
    out[inside] = np.where(dz < nn, np.maximum(m_nn - m_dz, 0.0), 0.0)
    return out


def _shape_reach(model: ModelSpec, scale: float) -> float:
    """Largest scaled shape radius that matters (marks truncated for power laws)."""
    r0 = model.fixed_radius
    unit = scale ** (-1.0 / model.dimension)
    if r0 is not None:
        return unit * r0
    return unit * model.marks.truncation_radius(model.dimension)


def inner_product_inflation(model: ModelSpec, scale: float) -> float:
    """Window inflation a pattern needs for the inverse-OU counts to be complete."""
    return _shape_reach(model, scale)


def _local_window(model: ModelSpec, z: np.ndarray, reach: float) -> Window | None:
    lo = np.maximum(z - reach, model.domain.lo)
    hi = np.minimum(z + reach, model.domain.hi)
    if np.any(hi <= lo):
        return None
    return Window(tuple(lo), tuple(hi))


def difference_operator(model: ModelSpec, pattern: PointPattern, z, scale: float, quad: QuadratureSpec) -> float:
    """Closed-form ``D_z F``, always <= 0."""
    z = np.asarray(z, dtype=float).reshape(model.dimension)
    if quad.method == "exact":
        if model.dimension != 1:
            raise InvalidArgumentError("exact quadrature is only available for d = 1")
        if not len(pattern) and model.fixed_radius is None:
            raise EmptyPatternError("the functional is infinite on an empty pattern")
        return float(np.ravel(_diff_line(model, pattern, z[None], scale))[0])
    r0 = model.fixed_radius
    reach = scale ** (-1.0 / model.dimension) * r0 if r0 is not None else np.inf
    win = _local_window(model, z, reach) if np.isfinite(reach) else model.domain
    if win is None:
        return 0.0
    x = quad.nodes(win)
    vals = _diff_integrand(model, pattern, x, np.broadcast_to(z, x.shape), scale)
    return -float(vals.mean()) * win.volume()


def difference_pathwise(model: ModelSpec, pattern: PointPattern, z, scale: float, quad: QuadratureSpec) -> float:
    """``F(pattern + z) - F(pattern)`` by two direct evaluations with shared quadrature."""
    z = np.asarray(z, dtype=float).reshape(1, model.dimension)
    after = avoidance_value(model, pattern.add_points(z), scale, quad)
    before = avoidance_value(model, pattern, scale, quad)
    return after - before


# --- inverse Ornstein-Uhlenbeck difference -----------------------------------

def _mark_nodes(model: ModelSpec, m: int, rng: np.random.Generator | None):
    """Mark samples and weights for power-law marks: random tilted or stratified quantiles."""
    d = model.dimension
    rate = _TILT * unit_ball_volume(d)
    shape = model.p / d
    if rng is not None:
        return model.marks.sample_tilted(m, rng, d, rate)
    g = special.gammaincinv(shape, (np.arange(m) + 0.5) / m) / rate
    s = g ** (1.0 / d)
    w = math.gamma(1.0 + shape) * rate ** (-shape) * np.exp(rate * g)
    return s, w


def _inverse_ou_integrand(model, pattern, x, z, s, scale):
    """``mehler(eta(B(x, rho(s))), omega radius(s)^d) * 1(|x - z| < rho(s)) * 1(x in A)``."""
    d = model.dimension
    omega = unit_ball_volume(d)
    radius = model.shapes.radius(s)
    rho = scale ** (-1.0 / d) * radius
    ok = model.domain.contains(x) & (np.linalg.norm(x - z, axis=1) < rho)
    out = np.zeros(len(x))
    if ok.any():
        k = pattern.index.count_in_balls(x[ok], rho[ok]) if len(pattern) else np.zeros(ok.sum(), int)
        out[ok] = mehler_integral(k, omega * radius[ok] ** d)
    return out


def inverse_ou_difference(model: ModelSpec, pattern: PointPattern, z, scale: float, quad: QuadratureSpec) -> float:
    """``D_z L^{-1}(F - E F)`` as the Mehler-weighted measure of shapes containing ``z``; >= 0."""
    d = model.dimension
    z = np.asarray(z, dtype=float).reshape(d)
    omega = unit_ball_volume(d)
    r0 = model.fixed_radius
    if r0 is not None:
        rho = scale ** (-1.0 / d) * r0
        if rho == 0:
            return 0.0
        win = _local_window(model, z, rho)
        if win is None:
            return 0.0
        a = omega * r0**d
        if quad.method == "exact":
            if d != 1:
                raise InvalidArgumentError("exact quadrature is only available for d = 1")
            lo, hi = max(z[0] - rho, win.lower[0]), min(z[0] + rho, win.upper[0])
            pts = pattern.points[:, 0]
            cuts = np.concatenate([[lo, hi], pts - rho, pts + rho])
            cuts = np.unique(cuts[(cuts >= lo) & (cuts <= hi)])
            mids = 0.5 * (cuts[1:] + cuts[:-1])
            k = pattern.index.count_in_balls(mids[:, None], rho) if len(pattern) else np.zeros(mids.size, int)
            return model.mark_mass * float(np.sum(np.diff(cuts) * mehler_integral(k, a)))
        x = quad.nodes(win)
        marks = np.full(len(x), model.marks.value)
        vals = _inverse_ou_integrand(model, pattern, x, np.broadcast_to(z, x.shape), marks, scale)
        return model.mark_mass * float(vals.mean()) * win.volume()
    # power-law marks: joint nodes in (x, s)
    reach = _shape_reach(model, scale)
    win = _local_window(model, z, reach)
    if win is None:
        return 0.0
    if quad.method == "monte-carlo":
        rng = quad.stream.generator() if quad.stream is not None else None
        if rng is None:
            raise InvalidArgumentError("monte-carlo quadrature needs a stream")
        x = win.uniform(quad.budget, rng)
        s, w = _mark_nodes(model, quad.budget, rng)
    else:
        m_s = max(1, int(round(math.sqrt(quad.budget))))
        lattice = QuadratureSpec("lattice", max(1, quad.budget // m_s))
        xs = lattice.nodes(win)
        s0, w0 = _mark_nodes(model, m_s, None)
        x = np.repeat(xs, m_s, axis=0)
        s, w = np.tile(s0, len(xs)), np.tile(w0, len(xs))
    vals = _inverse_ou_integrand(model, pattern, x, np.broadcast_to(z, x.shape), s, scale)
    return float(np.mean(vals * w)) * win.volume()


# --- variance identity -------------------------------------------------------

def inner_product_DF_DL(
    model: ModelSpec,
    pattern: PointPattern,
    scale: float,
    z_budget: int,
    quad: QuadratureSpec,
    stream: RngStream,
) -> McEstimate:
    """Estimate ``integral D_z F * (-D_z L^{-1}(F - E F)) * scale dz`` (expected value: Var F).

    ``z`` is uniform on the domain inflated by the largest scaled shape radius.
    Each ``z`` gets ``max(1, quad.budget // z_budget)`` independent inner nodes
    for the inverse-OU integral; on the line ``D_z F`` is exact, elsewhere it
    uses as many nodes drawn uniformly in the ball where it can be nonzero.
    The pattern must extend ``inner_product_inflation`` beyond the domain.
    """
    if z_budget < 1:
        raise InvalidArgumentError("z_budget must be >= 1")
    d = model.dimension
    omega = unit_ball_volume(d)
    reach = _shape_reach(model, scale)
    if reach == 0:
        return McEstimate(0.0, 0.0, z_budget, stream.master_seed)
    inner = max(1, quad.budget // z_budget)
    zwin = model.domain.inflate(reach)
    rng_z = stream.child(0).generator()
    zs = zwin.uniform(z_budget, rng_z)
    rng_x = stream.child(1).generator()
    rng_y = stream.child(2).generator()

    if d == 1 and (len(pattern) or model.fixed_radius is not None):
        dz = -_diff_line(model, pattern, zs[:, 0], scale)
    else:
        zr = np.repeat(zs, inner, axis=0)
        x = zr + sample_in_ball(rng_x, np.full(len(zr), reach), d)
        f = _diff_integrand(model, pattern, x, zr, scale)
        dz = f.reshape(z_budget, inner).mean(axis=1) * omega * reach**d

    zr = np.repeat(zs, inner, axis=0)
    r0 = model.fixed_radius
    if r0 is not None:
        rho = np.full(len(zr), reach)
        s = np.full(len(zr), model.marks.value)
        w = np.full(len(zr), model.mark_mass)
    else:
        s, w = _mark_nodes(model, len(zr), rng_y)
        rho = scale ** (-1.0 / d) * s
    y = zr + sample_in_ball(rng_y, rho, d)
    g = _inverse_ou_integrand(model, pattern, y, zr, s, scale) * w * omega * rho**d
    lz = g.reshape(z_budget, inner).mean(axis=1)
    return McEstimate.from_samples(dz * lz, stream.master_seed, scale=scale * zwin.volume())

"""Avoidance functionals evaluated on realized point patterns.

Every supported shape is a ball, so the set of marks avoided at ``x`` depends
only on the nearest-point distance: ``x + r Q(s)`` misses the pattern exactly
when ``radius(s) * r <= nn(x)`` (open balls).  Writing ``M(u)`` for the mark
mass with shape radius at most ``u``, the functional becomes

    F = integral over the domain of M(scale**(1/d) * nn(x)) dx,

which is what the quadrature routines integrate.  On the line the integral is
evaluated in closed form from the sorted points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import partial

import numpy as np

from .errors import EmptyPatternError, InvalidArgumentError, OutOfRegimeError
from .geometry import MarkMeasure, ShapeFamily, Window, ball_box_volume, unit_ball_volume
from .mc import McEstimate
from .ppp import GridIndex, PointPattern, sample_binomial, sample_homogeneous
from .rng import RngStream

KINDS = ("generic-avoidance", "germ-grain", "quantization")
PROCESSES = ("poisson", "binomial")


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    dimension: int
    shapes: ShapeFamily
    marks: MarkMeasure
    domain: Window
    process: str = "poisson"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown model kind {self.kind!r}")
        if self.process not in PROCESSES:
            raise InvalidArgumentError(f"unknown process {self.process!r}")
        if self.domain.dimension != self.dimension:
            raise InvalidArgumentError("domain dimension does not match model dimension")
        if self.shapes.kind == "fixed-ball" and self.marks.kind != "dirac":
            raise InvalidArgumentError("fixed-ball shapes need a finite (dirac) mark measure")
        if self.kind == "germ-grain" and (self.shapes.kind != "fixed-ball" or self.marks.kind != "dirac"):
            raise InvalidArgumentError("germ-grain uses fixed-ball shapes and dirac marks")
        if self.kind == "quantization":
            if self.shapes.kind != "ball-of-radius-s" or self.marks.kind != "power-law":
                raise InvalidArgumentError("quantization uses ball-of-radius-s shapes and power-law marks")
            if self.domain != Window.cube(self.dimension):
                raise InvalidArgumentError("quantization is defined on the unit cube")

    @classmethod
    def germ_grain(cls, d: int, t: float, process: str = "poisson", domain: Window | None = None):
        return cls("germ-grain", d, ShapeFamily.fixed_ball(t), MarkMeasure.dirac(),
                   domain or Window.cube(d), process)

    @classmethod
    def quantization(cls, d: int, p: float, process: str = "poisson"):
        return cls("quantization", d, ShapeFamily.ball_of_radius_s(), MarkMeasure.power_law(p),
                   Window.cube(d), process)

    @property
    def t(self) -> float:
        return self.shapes.t

    @property
    def p(self) -> float:
        return self.marks.p

    @property
    def fixed_radius(self) -> float | None:
        """Unit-scale shape radius when every mark gives the same ball, else None."""
        if self.shapes.kind == "fixed-ball":
            return self.shapes.t
        if self.marks.kind == "dirac":
            return self.marks.value
        return None

    @property
    def mark_mass(self) -> float:
        return self.marks.total_mass

    def avoided_mass(self, u):
        """``M(u)``: mark mass whose shape radius is at most ``u``."""
        u = np.asarray(u, dtype=float)
        r0 = self.fixed_radius
        if r0 is not None:
            return (r0 <= u).astype(float)
        return self.marks.mass_below(u)

    def natural_value(self, f: float, scale: float) -> float:
        """Map the avoidance integral to the model's reported functional."""
        if self.kind == "germ-grain":
            return scale * (self.domain.volume() - f)
        if self.kind == "quantization":
            return scale ** (-self.p / self.dimension) * f
        return f

    def natural_factor(self, scale: float) -> float:
        """``|d natural / d F|``, the linear factor between F and the reported value."""
        if self.kind == "germ-grain":
            return scale
        if self.kind == "quantization":
            return scale ** (-self.p / self.dimension)
        return 1.0

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "dim": self.dimension, "process": self.process}
        if self.kind == "germ-grain":
            out["radius"] = self.t
        elif self.kind == "quantization":
            out["exponent"] = self.p
        else:
            out.update(shapes=self.shapes.kind, t=self.shapes.t, marks=self.marks.kind,
                       mark_value=self.marks.value, exponent=self.marks.p)
        out["domain"] = {"lower": list(self.domain.lower), "upper": list(self.domain.upper)}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        d = int(data["dim"])
        dom = data.get("domain")
        domain = Window(tuple(dom["lower"]), tuple(dom["upper"])) if dom else Window.cube(d)
        process = data.get("process", "poisson")
        kind = data["kind"]
        if kind == "germ-grain":
            return cls.germ_grain(d, float(data["radius"]), process, domain)
        if kind == "quantization":
            return cls.quantization(d, float(data["exponent"]), process)
        if kind == "generic-avoidance":
            shapes = ShapeFamily(data["shapes"], float(data.get("t", 0.0)))
            marks = MarkMeasure(data["marks"], float(data.get("mark_value", 0.0)), float(data.get("exponent", 1.0)))
            return cls(kind, d, shapes, marks, domain, process)
        raise InvalidArgumentError(f"unknown model kind {kind!r}")


QUAD_METHODS = ("monte-carlo", "lattice", "exact")
_STRIP_SWEEPS = 50  # strip sweep wins while each node is visited this few times


@dataclass(frozen=True)
class QuadratureSpec:
    """How to integrate over the domain.

    ``exact`` is only available on the line, where the integrands are piecewise
    elementary between sorted points.
    """

    method: str = "monte-carlo"
    budget: int = 100_000
    stream: RngStream | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.method not in QUAD_METHODS:
            raise InvalidArgumentError(f"unknown quadrature method {self.method!r}")
        if self.budget < 1:
            raise InvalidArgumentError("quadrature budget must be >= 1")

    @classmethod
    def auto(cls, d: int, budget: int = 100_000) -> "QuadratureSpec":
        return cls("exact" if d == 1 else "monte-carlo", budget)

    def with_stream(self, stream: RngStream) -> "QuadratureSpec":
        return replace(self, stream=stream)

    def nodes(self, window: Window) -> np.ndarray:
        d = window.dimension
        if self.method == "lattice":
            m = math.ceil(self.budget ** (1.0 / d) - 1e-9)
            g = (np.arange(m) + 0.5) / m
            mesh = np.stack(np.meshgrid(*([g] * d), indexing="ij"), axis=-1).reshape(-1, d)
            return window.lo + mesh * window.sides
        if self.method == "monte-carlo":
            if self.stream is None:
                raise InvalidArgumentError("monte-carlo quadrature needs a stream")
            return window.uniform(self.budget, self.stream.generator())
        raise InvalidArgumentError("exact quadrature has no nodes")


# --- exact integrals on the line -------------------------------------------

def uncovered_intervals(z: np.ndarray, rho: float, a: float, b: float):
    """Intervals of ``[a, b]`` at distance >= rho from every sorted point ``z``."""
    if rho <= 0 or z.size == 0:
        return np.array([a]), np.array([b])
    lo = np.concatenate([[a], z + rho])
    hi = np.concatenate([z - rho, [b]])
    lo, hi = np.maximum(lo, a), np.minimum(hi, b)
    keep = hi > lo
    return lo[keep], hi[keep]


def _signed_power_primitive(u, p):
    return np.sign(u) * np.abs(u) ** (p + 1) / (p + 1)


def power_integral_line(z: np.ndarray, p: float, a: float, b: float) -> float:
    """``integral_a^b min_i |x - z_i|**p dx`` for sorted ``z`` (Voronoi cells)."""
    if z.size == 0:
        raise EmptyPatternError("nearest distance requested from an empty pattern")
    mids = 0.5 * (z[1:] + z[:-1])
    lo = np.maximum(np.concatenate([[-np.inf], mids]), a)
    hi = np.minimum(np.concatenate([mids, [np.inf]]), b)
    keep = hi > lo
    zk = z[keep]
    return float(np.sum(_signed_power_primitive(hi[keep] - zk, p) - _signed_power_primitive(lo[keep] - zk, p)))


def _sorted_line(pattern: PointPattern) -> np.ndarray:
    return np.sort(pattern.points[:, 0])


def avoidance_value(model: ModelSpec, pattern: PointPattern, scale: float, quad: QuadratureSpec) -> float:
    """Integral over the domain and marks of the indicator that the scaled shape misses the pattern."""
    if not scale > 0:
        raise InvalidArgumentError("scale must be > 0")
    d = model.dimension
    dom = model.domain
    r0 = model.fixed_radius
    unit = scale ** (-1.0 / d)
    if quad.method == "exact":
        if d != 1:
            raise InvalidArgumentError("exact quadrature is only available for d = 1")
        z = _sorted_line(pattern)
        a, b = dom.lower[0], dom.upper[0]
        if r0 is not None:
            lo, hi = uncovered_intervals(z, unit * r0, a, b)
            return float(np.sum(hi - lo)) * model.mark_mass
        # power-law marks with ball shapes: M(u) = u**p
        return scale ** (model.p / d) * power_integral_line(z, model.p, a, b)
    return avoidance_at_nodes(model, pattern, scale, quad.nodes(dom)) * dom.volume()


def avoidance_at_nodes(model: ModelSpec, pattern: PointPattern, scale: float, nodes: np.ndarray) -> float:
    """Mean over ``nodes`` of the avoided mark mass."""
    d = model.dimension
    r0 = model.fixed_radius
    unit = scale ** (-1.0 / d)
    if r0 is not None:
        return model.mark_mass * (1.0 - covered_fraction(pattern, nodes, unit * r0))
    if not len(pattern):
        raise EmptyPatternError("no points to measure distances against")
    nn = pattern.index.nearest_distances(nodes)
    return float(np.mean(model.avoided_mass(nn / unit)))


def covered_fraction(pattern: PointPattern, nodes: np.ndarray, rho: float) -> float:
    """Fraction of ``nodes`` strictly within ``rho`` of some pattern point."""
    if rho <= 0 or not len(pattern) or not len(nodes):
        return 0.0
    d = nodes.shape[1]
    if d == 1:
        nn = pattern.index.nearest_distances(nodes)
        return float(np.mean(nn < rho))
    width = float(np.ptp(nodes[:, 0])) or 1.0
    if 2 * rho * len(pattern) / width <= _STRIP_SWEEPS:
        return _covered_by_strips(pattern.points, nodes, rho)
    # index the nodes and query once per pattern point
    lo, hi = nodes.min(axis=0), nodes.max(axis=0)
    box = Window(tuple(lo - 1e-9), tuple(hi + 1e-9))
    side = max(rho, (box.volume() / len(nodes)) ** (1.0 / d))
    idx = GridIndex(PointPattern(nodes, box), side)
    _, hit = idx.pairs_within(pattern.points, rho)
    covered = np.zeros(len(nodes), dtype=bool)
    covered[hit] = True
    return float(covered.mean())


def _covered_by_strips(points: np.ndarray, nodes: np.ndarray, rho: float) -> float:
    """Sweep the x-sorted nodes once per point, testing only its ``|dx| < rho`` strip."""
    order = np.argsort(nodes[:, 0])
    xs = nodes[order, 0]
    rest = nodes[order, 1:]
    covered = np.zeros(len(nodes), dtype=bool)
    lo = np.searchsorted(xs, points[:, 0] - rho, side="right")
    hi = np.searchsorted(xs, points[:, 0] + rho, side="left")
    r2 = rho * rho
    for p, a, b in zip(points, lo, hi):
        if b > a:
            d2 = (xs[a:b] - p[0]) ** 2 + ((rest[a:b] - p[1:]) ** 2).sum(axis=1)
            covered[a:b] |= d2 < r2
    return float(covered.mean())


def germ_grain_volume(pattern: PointPattern, t: float, box: Window, quad: QuadratureSpec) -> float:
    """Volume of the union of radius-``t`` balls around the pattern points, inside ``box``."""
    if t < 0:
        raise InvalidArgumentError("radius must be >= 0")
    if quad.method == "exact":
        if box.dimension != 1:
            raise InvalidArgumentError("exact quadrature is only available for d = 1")
        lo, hi = uncovered_intervals(_sorted_line(pattern), t, box.lower[0], box.upper[0])
        return box.volume() - float(np.sum(hi - lo))
    return box.volume() * covered_fraction(pattern, quad.nodes(box), t)


def quantization_error(pattern: PointPattern, p: float, quad: QuadratureSpec, domain: Window | None = None) -> float:
    """Integral over the unit cube of the nearest-point distance to the power ``p``."""
    if not len(pattern):
        raise EmptyPatternError("quantization error of an empty pattern")
    domain = domain or Window.cube(pattern.dimension)
    if quad.method == "exact":
        if domain.dimension != 1:
            raise InvalidArgumentError("exact quadrature is only available for d = 1")
        return power_integral_line(_sorted_line(pattern), p, domain.lower[0], domain.upper[0])
    nn = pattern.index.nearest_distances(quad.nodes(domain))
    return float(np.mean(nn**p)) * domain.volume()


# --- pattern sampling per model --------------------------------------------

def quantization_start_radius(d: int, scale: float) -> float:
    """Initial inflation for nearest-point searches at intensity ``scale``."""
    omega = unit_ball_volume(d)
    return 2.0 * (d * max(math.log(scale), 1.0) / (omega * scale)) ** (1.0 / d)


def _probe_points(model: ModelSpec, nodes: np.ndarray | None) -> np.ndarray:
    if nodes is not None:
        return nodes
    if model.dimension != 1:
        raise InvalidArgumentError("adaptive sampling needs quadrature nodes for d >= 2")
    # on the line the endpoints are the worst case: nn is 1-Lipschitz
    return np.array([[model.domain.lower[0]], [model.domain.upper[0]]])


def sample_adaptive(
    domain: Window,
    scale: float,
    stream: RngStream,
    probes: np.ndarray,
    min_inflation: float = 0.0,
    max_doublings: int = 30,
) -> PointPattern:
    """Poisson pattern on a window grown until each probe's nearest point is certified.

    Returns the pattern; see ``sample_adaptive_nn`` for the probe distances too.
    """
    return sample_adaptive_nn(domain, scale, stream, probes, min_inflation, max_doublings)[0]


def sample_adaptive_nn(
    domain: Window,
    scale: float,
    stream: RngStream,
    probes: np.ndarray,
    min_inflation: float = 0.0,
    max_doublings: int = 30,
) -> tuple[PointPattern, np.ndarray]:
    """Adaptive Poisson pattern together with the nearest distances of ``probes``.

    Level ``j`` covers ``domain`` inflated by ``rho0 * 2**j`` and adds the points of
    its own shell, so a pattern is the same whichever level the search stops at.
    A probe is certified when its nearest distance is below its distance to the
    boundary of the sampled window (no unseen point can be closer).
    """
    rho = quantization_start_radius(domain.dimension, scale)
    inner: Window | None = None
    chunks = []
    for level in range(max_doublings + 1):
        outer = domain.inflate(rho)
        shell = sample_homogeneous(outer, scale, stream.child(level)).points
        if inner is not None:
            shell = shell[~inner.contains(shell)]
        chunks.append(shell)
        pts = np.vstack(chunks)
        if len(pts) and rho >= min_inflation:
            pattern = PointPattern(pts, outer, stream.master_seed)
            nn = pattern.index.nearest_distances(probes)
            if np.all(nn < outer.distance_to_boundary(probes)):
                return pattern, nn
        inner = outer
        rho *= 2.0
    raise EmptyPatternError(f"no certified nearest points after {max_doublings} doublings")


def sample_model_pattern(
    model: ModelSpec,
    scale: float,
    stream: RngStream,
    nodes: np.ndarray | None = None,
    min_inflation: float = 0.0,
) -> PointPattern:
    """Pattern for one replicate: binomial on the domain, or Poisson on a suitably inflated window."""
    if model.process == "binomial":
        n = int(round(scale))
        if n != scale or n < 1:
            raise InvalidArgumentError(f"binomial scale must be a positive integer, got {scale}")
        return sample_binomial(model.domain, n, stream)
    if not scale > 0:
        raise InvalidArgumentError("intensity must be > 0")
    r0 = model.fixed_radius
    if r0 is not None:
        reach = max(scale ** (-1.0 / model.dimension) * r0, min_inflation)
        window = model.domain.inflate(reach) if reach > 0 else model.domain
        return sample_homogeneous(window, scale, stream)
    return sample_adaptive(model.domain, scale, stream, _probe_points(model, nodes), min_inflation)


def evaluate_replicate(model: ModelSpec, scale: float, master_seed: int, index: int, quad: QuadratureSpec) -> float:
    """Reported functional for replicate ``index`` (pattern on child 0, nodes on child 1)."""
    stream = RngStream(master_seed, index)
    q = quad.with_stream(stream.child(1))
    if q.method == "exact":
        pattern = sample_model_pattern(model, scale, stream.child(0))
        f = avoidance_value(model, pattern, scale, q)
    elif model.fixed_radius is None and model.process == "poisson":
        nodes = q.nodes(model.domain)
        _, nn = sample_adaptive_nn(model.domain, scale, stream.child(0), nodes)
        u = nn * scale ** (1.0 / model.dimension)
        f = float(np.mean(model.avoided_mass(u))) * model.domain.volume()
    else:
        nodes = q.nodes(model.domain)
        pattern = sample_model_pattern(model, scale, stream.child(0), nodes)
        f = avoidance_at_nodes(model, pattern, scale, nodes) * model.domain.volume()
    return model.natural_value(f, scale)


def _replicate_block(model, scale, master_seed, quad, indices):
    return [evaluate_replicate(model, scale, master_seed, i, quad) for i in indices]


def replicate_functional(
    model: ModelSpec,
    scale: float,
    reps: int,
    master_seed: int,
    quad: QuadratureSpec,
    parallelism: int = 1,
    skip_empty: bool = False,
) -> list[float]:
    """``reps`` independent functional values in replicate order.

    With ``skip_empty`` a replicate whose pattern cannot serve nearest-point
    queries yields ``nan`` instead of raising.
    """
    from .parallel import run_chunked

    if reps < 1:
        raise InvalidArgumentError("reps must be >= 1")
    fn = partial(_replicate_block_safe if skip_empty else _replicate_block, model, scale, master_seed, quad)
    return run_chunked(fn, reps, parallelism)


def _replicate_block_safe(model, scale, master_seed, quad, indices):
    out = []
    for i in indices:
        try:
            out.append(evaluate_replicate(model, scale, master_seed, i, quad))
        except EmptyPatternError:
            out.append(float("nan"))
    return out


# --- closed-form moments ---------------------------------------------------

def mean_avoidance(model: ModelSpec) -> float:
    """``E F = l(A) * integral exp(-l(Q(s))) dnu(s)`` (scale free for Poisson input)."""
    d = model.dimension
    omega = unit_ball_volume(d)
    r0 = model.fixed_radius
    if r0 is not None:
        inner = model.mark_mass * math.exp(-omega * r0**d)
    else:
        q = model.p / d
        inner = omega ** (-q) * math.gamma(1.0 + q)
    return model.domain.volume() * inner


def mean_binomial_avoidance(model: ModelSpec, n: int, budget: int = 200_000, seed: int = 0) -> float:
    """``E F_n`` for n uniform points on the domain (no points outside it).

    Closed form on the line for fixed radii; otherwise a Monte Carlo average of
    ``(1 - l(B(x, r) ∩ A) / l(A))**n`` over uniform ``x``.
    """
    r0 = model.fixed_radius
    if r0 is None:
        raise InvalidArgumentError("binomial mean needs a finite mark measure")
    d = model.dimension
    dom = model.domain
    vol = dom.volume()
    rho = n ** (-1.0 / d) * r0
    if d == 1:
        length = vol
        if rho == 0:
            return vol * model.mark_mass
        if 2 * rho >= length:
            # every ball reaches both ends: fall through to the integral form
            x = (np.arange(budget) + 0.5) / budget * length + dom.lower[0]
            frac = ball_box_volume(x[:, None], np.full(budget, rho), dom) / length
            return float(np.mean((1 - frac) ** n)) * vol * model.mark_mass
        c = 2 * rho / length
        e = rho / length
        interior = (length - 2 * rho) * (1 - c) ** n
        # near each end the covered fraction is (rho + s) / length for s in [0, rho)
        edge = length * ((1 - e) ** (n + 1) - (1 - c) ** (n + 1)) / (n + 1)
        return (interior + 2 * edge) * model.mark_mass
    rng = RngStream(seed).generator()
    x = dom.uniform(budget, rng)
    frac = ball_box_volume(x, np.full(budget, rho), dom, rng) / vol
    return float(np.mean((1 - frac) ** n)) * vol * model.mark_mass


def mean_variance_closed(model: ModelSpec, scale: float, budget: int = 200_000, seed: int = 0):
    """``(mean of the reported functional, C1 estimate)``.

    Poisson input only.  The second entry is the limiting constant with
    ``Var F ~ C1 / scale``; multiply by ``natural_factor(scale)**2 / scale`` for
    the reported functional.
    """
    from .constants import c1_limit

    if model.process != "poisson":
        raise OutOfRegimeError("closed-form mean is for Poisson input; see mean_binomial_avoidance")
    if not scale > 0:
        raise InvalidArgumentError("scale must be > 0")
    ef = mean_avoidance(model)
    mean = model.natural_value(ef, scale)
    c1 = c1_limit(model, budget, RngStream(seed))
    return mean, c1

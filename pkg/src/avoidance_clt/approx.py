"""Numeric checks of the binomial-vs-exponential approximation inequalities and
of the bias and variance of replacing ``n`` sample points by ``k``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .errors import InvalidArgumentError, OutOfRegimeError, OutOfScopeError
from .functionals import ModelSpec, QuadratureSpec, avoidance_value
from .geometry import unit_ball_volume
from .mc import McEstimate
from .parallel import run_chunked
from .ppp import PointPattern, sample_binomial
from .rng import RngStream

SLACK = 1e-12
X_GRID = (0.1, 0.5, 1.0, 2.0, 4.0)
N_GRID = (10, 100, 1000, 10_000)


@dataclass(frozen=True)
class InequalityCheck:
    lhs: float
    rhs: float
    params: dict = field(default_factory=dict)

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.margin >= -SLACK

    def to_dict(self) -> dict:
        return {"params": dict(self.params), "lhs": self.lhs, "rhs": self.rhs, "margin": self.margin, "pass": self.passed}


def a_poly(x: float) -> float:
    if x < 0:
        raise InvalidArgumentError("x must be >= 0")
    return 2.0 / 3.0 * x**3 + x**4 / 8.0


def _pow1m(x: float, n: float, e: float) -> float:
    """``(1 - x/n) ** e`` via log1p."""
    return math.exp(e * math.log1p(-x / n))


def check_power_exp_bound(x: float, y: float, n: int) -> tuple[InequalityCheck, InequalityCheck]:
    """``(1 - x/n)^n`` against ``exp(-x)(1 - x^2/(2n))``, alone and for a product with ``y``."""
    if not (0 < 2 * x < n and 0 < 2 * y < n):
        raise OutOfRegimeError(f"need 0 < 2x < n and 0 < 2y < n, got x={x}, y={y}, n={n}")
    px, py = _pow1m(x, n, n), _pow1m(y, n, n)
    one = abs(px - math.exp(-x) * (1 - x * x / (2 * n)))
    two = abs(px * py - math.exp(-(x + y)) * (1 - (x * x + y * y) / (2 * n)))
    ax, ay = a_poly(x), a_poly(y)
    rhs2 = x * x * y * y / (4 * n * n) + ax / n**2 + ay / n**2 + ax * ay / n**4
    params = {"x": x, "y": y, "n": n}
    return (InequalityCheck(one, ax / n**2, {**params, "form": "single"}),
            InequalityCheck(two, rhs2, {**params, "form": "product"}))


def check_excess_power_bound(x: float, n: int, k: int) -> InequalityCheck:
    """``(1 - x/n)^(k-n)`` against its second-order exponential expansion."""
    if not (0 < 2 * x < n and 0 < k - n < n):
        raise OutOfRegimeError(f"need 0 < 2x < n and 0 < k - n < n, got x={x}, n={n}, k={k}")
    r = (k - n) / n
    lhs = abs(_pow1m(x, n, k - n) - math.exp(-r * x) * (1 - r * x * x / (2 * n)))
    return InequalityCheck(lhs, a_poly(x) * r / n**2, {"x": x, "n": n, "k": k})


def admissible_k(n: int) -> list[int]:
    """Excess sample sizes spanning ``0 < k - n < n``."""
    steps = {1, max(1, int(math.isqrt(n))), max(1, n // 2), n - 1}
    return sorted(n + s for s in steps if 0 < s < n)


def inequality_grid(xs=X_GRID, ns=N_GRID) -> list[InequalityCheck]:
    """Every inequality check over the default grid, in a fixed order."""
    out = []
    for n in ns:
        for x in xs:
            if not 2 * x < n:
                continue
            for y in xs:
                if 2 * y < n:
                    out.extend(check_power_exp_bound(x, y, n))
            for k in admissible_k(n):
                out.append(check_excess_power_bound(x, n, k))
    return out


def tightness(checks: list[InequalityCheck]) -> float:
    """Smallest ``rhs / lhs`` over checks with nonzero left side."""
    ratios = [c.rhs / c.lhs for c in checks if c.lhs > 0]
    return min(ratios) if ratios else math.inf


# --- sample-size perturbation -------------------------------------------------

def _shape_mass(model: ModelSpec) -> float:
    """Largest shape volume ``l(B(0, K))``; requires bounded shapes and finite marks."""
    r0 = model.fixed_radius
    if r0 is None or not math.isfinite(model.mark_mass):
        raise OutOfScopeError("needs a finite mark measure with bounded shapes")
    return unit_ball_volume(model.dimension) * r0**model.dimension


def bias_constant(model: ModelSpec, n: int, k: int) -> float:
    """Explicit constant for the second-order bias term.

    For ``k > n`` it is ``K^2 nu / (2 l(A))``; for ``k < n`` the first-order
    difference of the two powers adds ``K^2 nu / l(A) + K^3 nu / l(A)^2``.
    """
    kk = _shape_mass(model)
    vol = model.domain.volume()
    mass = model.mark_mass
    if k >= n:
        return 0.5 * kk**2 * mass / vol
    return mass * (1.5 * kk**2 / vol + kk**3 / vol**2)


def _check_sizes(model: ModelSpec, n: int, k: int) -> None:
    _shape_mass(model)
    if n < 1 or k < 0 or abs(k - n) >= n:
        raise OutOfRegimeError(f"need |k - n| < n, got n={n}, k={k}")


def _coupled_block(model, n, k, quad, master_seed, indices):
    m = max(n, k)
    out = []
    for i in indices:
        stream = RngStream(master_seed, i)
        full = sample_binomial(model.domain, m, stream.child(0)).points
        q = quad.with_stream(stream.child(1))
        fn = avoidance_value(model, PointPattern(full[:n], model.domain), n, q)
        fk = avoidance_value(model, PointPattern(full[:k], model.domain), n, q)
        out.append(fn - fk)
    return out


def coupled_differences(
    model: ModelSpec, n: int, k: int, reps: int, master_seed: int,
    quad: QuadratureSpec | None = None, workers: int = 1,
) -> np.ndarray:
    """``F_n(first n points) - F_n(first k points)`` for ``reps`` prefix-coupled samples."""
    _check_sizes(model, n, k)
    if reps < 2:
        raise InvalidArgumentError("reps must be >= 2")
    quad = quad or QuadratureSpec.auto(model.dimension)
    fn = partial(_coupled_block, model, n, k, quad, master_seed)
    return np.asarray(run_chunked(fn, reps, workers), dtype=float)


def poissonization_bias(
    model: ModelSpec, n: int, k: int, reps: int, stream: RngStream,
    quad: QuadratureSpec | None = None, alpha: float | None = None, workers: int = 1,
):
    """``(MC mean difference, first-order prediction alpha_n (k-n)/n, second-order bound)``."""
    from .constants import alpha_n

    _check_sizes(model, n, k)
    diffs = coupled_differences(model, n, k, reps, stream.derive_seed(), quad, workers)
    mc = McEstimate.from_samples(diffs, stream.master_seed)
    if alpha is None:
        alpha = alpha_n(model, n, 200_000, stream.child(1 << 20)).value
    predicted = alpha / n * (k - n)
    bound = bias_constant(model, n, k) * ((k - n) / n) ** 2
    return mc, predicted, bound


def variance_estimate(samples) -> McEstimate:
    """Unbiased sample variance with the standard error of the centred squares."""
    x = np.asarray(samples, dtype=float)
    m = x.size
    sq = (x - x.mean()) ** 2 * (m / (m - 1))
    return McEstimate.from_samples(sq)


def min_sample_size(model: ModelSpec) -> int:
    """Smallest admissible ``n``: more than four shape volumes."""
    return int(math.floor(4 * _shape_mass(model))) + 1


def variance_ratio(model, n, k, reps, master_seed, quad=None, workers=1) -> tuple[McEstimate, float]:
    """Coupled-difference variance and its ratio to ``|k - n| / n^2``."""
    var = variance_estimate(coupled_differences(model, n, k, reps, master_seed, quad, workers))
    return var, var.value * n * n / abs(k - n)


PILOT_GRID = ((1000, 1032), (1000, 968), (1000, 1100))


def calibrate_variance_constant(
    model: ModelSpec, reps: int, stream: RngStream, grid=PILOT_GRID, quad=None, workers: int = 1,
) -> float:
    """Twice the largest observed ``Var * n^2 / |k - n|`` over a pilot grid."""
    worst = 0.0
    for i, (n, k) in enumerate(grid):
        if n < min_sample_size(model):
            raise OutOfRegimeError(f"pilot n={n} is below the admissible size")
        _, ratio = variance_ratio(model, n, k, reps, stream.child(i).derive_seed(), quad, workers)
        worst = max(worst, ratio)
    return 2.0 * worst


def poissonization_variance(
    model: ModelSpec, n: int, k: int, reps: int, stream: RngStream, constant: float,
    quad: QuadratureSpec | None = None, workers: int = 1,
):
    """``(MC variance of the coupled difference, constant * |k - n| / n^2)``."""
    _check_sizes(model, n, k)
    if n < min_sample_size(model):
        raise OutOfRegimeError(f"n must be >= {min_sample_size(model)}")
    if k == n:
        return McEstimate.exact(0.0), 0.0
    var, _ = variance_ratio(model, n, k, reps, stream.derive_seed(), quad, workers)
    return McEstimate(var.value, var.se, var.n, stream.master_seed), constant * abs(k - n) / n**2

"""Self-checks run by ``verify``: each check is a dict with a ``pass`` flag."""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate

from . import approx
from .functionals import ModelSpec, QuadratureSpec, sample_model_pattern
from .geometry import Ball
from .malliavin import (chaos_term_indicator, chaos_variance_indicator, difference_operator, difference_pathwise,
                        inverse_ou_difference, mehler_integral)
from .moments import jackknife_covariance, mc_check_covariance, mc_check_moment
from .rng import RngStream

SUITES = ("malliavin", "moments", "approx")


def _record(name: str, params: dict, lhs: float, rhs: float, passed: bool, **extra) -> dict:
    return {"check": name, "params": params, "lhs": float(lhs), "rhs": float(rhs),
            "margin": float(rhs - lhs), **extra, "pass": bool(passed)}


def _close(name, params, value, target, tol):
    err = abs(value - target)
    return _record(name, params, err, tol, err <= tol, value=float(value), target=float(target))


# --- malliavin ------------------------------------------------------------------

def malliavin_checks(seed: int, draws: int = 100_000) -> list[dict]:
    out = []
    for k, a, target in ((0, 0.0, 1.0), (1, 0.0, 0.5)):
        out.append(_close("mehler_value", {"k": k, "a": a}, mehler_integral(k, a), target, 1e-12))
    for k, a in ((3, 2.0), (10, 0.5), (40, 25.0), (5, 60.0)):
        ref = integrate.quad(lambda t: t**k * math.exp(-a * t), 0, 1, epsabs=0, epsrel=1e-13)[0]
        out.append(_close("mehler_quadrature", {"k": k, "a": a}, mehler_integral(k, a), ref, 1e-10 * ref))
    ks = np.arange(31)
    for a in (0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 20.0):
        v = mehler_integral(ks, np.full(ks.shape, a))
        lo_ok = np.all(v >= math.exp(-a) / (ks + 1) * (1 - 1e-12))
        hi_ok = np.all(v <= 1 / (ks + 1) * (1 + 1e-12)) and np.all(v <= math.exp(-a / 2) + 2.0**-ks)
        mono = np.all(np.diff(v) < 0)
        worst = float(np.max(v * (ks + 1)))
        out.append(_record("mehler_bounds", {"a": a, "k_max": 30}, worst, 1.0, bool(lo_ok and hi_ok and mono)))

    # chaos terms of the indicator functional with unit mass
    rng = RngStream(seed, 0).generator()
    k = rng.poisson(1.0, draws)
    terms = {n: chaos_term_indicator(n, k, 1.0) for n in range(1, 5)}
    for n, x in terms.items():
        var = approx.variance_estimate(x)
        target = chaos_variance_indicator(n, 1.0)
        err = abs(var.value - target)
        out.append(_record("chaos_variance", {"n": n, "draws": draws}, err, 4 * var.se, err <= 4 * var.se,
                           value=var.value, target=target))
    for n in range(1, 5):
        for m in range(n + 1, 5):
            cov, se = jackknife_covariance(terms[n], terms[m])
            out.append(_record("chaos_orthogonality", {"n": n, "m": m}, abs(cov), 4 * se, abs(cov) <= 4 * se))
    partial = math.fsum(chaos_variance_indicator(n, 1.0) for n in range(1, 11))
    out.append(_close("chaos_completeness", {"n_max": 10}, partial, math.exp(-1) - math.exp(-2), 1e-6))

    # difference operator: closed form against two evaluations
    for model, scale in ((ModelSpec.germ_grain(1, 0.5), 100.0), (ModelSpec.quantization(1, 1.0), 50.0),
                         (ModelSpec.quantization(1, 2.0), 50.0)):
        stream = RngStream(seed, 1)
        quad = QuadratureSpec("exact")
        pattern = sample_model_pattern(model, scale, stream.child(0))
        zs = stream.child(1).generator().uniform(-0.05, 1.05, 50)
        diff = max(abs(difference_operator(model, pattern, z, scale, quad)
                       - difference_pathwise(model, pattern, z, scale, quad)) for z in zs)
        out.append(_record("difference_pathwise", {"model": model.kind, "p": model.p if model.kind == "quantization"
                                                   else None, "lambda": scale, "points": 50}, diff, 1e-9, diff <= 1e-9))
        lows = min(inverse_ou_difference(model, pattern, z, scale, quad) for z in zs[:10])
        out.append(_record("inverse_ou_nonnegative", {"model": model.kind, "lambda": scale}, -lows, 0.0, lows >= 0))
    out.append(_close("inverse_ou_indicator", {"k": 0, "a": 1.0}, mehler_integral(0, 1.0), 1 - math.exp(-1), 1e-15))
    return out


# --- moments --------------------------------------------------------------------

def moment_checks(seed: int, reps: int = 100_000, configs: int = 20) -> list[dict]:
    out = []
    r = 0.5
    cases = {
        "equal": (Ball((0.0,), r), Ball((0.0,), r)),
        "disjoint": (Ball((0.0,), r), Ball((3.0,), r)),
        "nested": (Ball((0.1,), 0.25), Ball((0.0,), r)),
        "overlap_2d": (Ball((0.0, 0.0), 0.5), Ball((0.3, 0.2), 0.4)),
    }
    root = RngStream(seed, 2)
    for i, (name, (a, b)) in enumerate(cases.items()):
        scale = 1.0 / a.volume() if name != "overlap_2d" else 2.0
        mc, closed = mc_check_moment(a, b, scale, reps, root.child(i))
        err = abs(mc.value - closed)
        out.append(_record("moment_closed_form", {"case": name, "lambda": scale, "reps": reps}, err, 3 * mc.se,
                           err <= 3 * mc.se, value=mc.value, se=mc.se, target=closed))
    half = Ball((0.0,), r)
    named = {
        "separated": (half, half, Ball((5.0,), r), Ball((5.0,), r)),
        "all_equal": (half, half, half, half),
        "overlapping_pair": (half, Ball((0.4,), r), half, Ball((0.4,), r)),
    }
    cov_stream = RngStream(seed, 3)
    for i, (name, balls) in enumerate(named.items()):
        mc, bound = mc_check_covariance(*balls, 1.0, reps, cov_stream.child(i))
        out.append(_record("covariance_bound", {"case": name, "lambda": 1.0, "reps": reps}, mc.value,
                           bound + 4 * mc.se, mc.value <= bound + 4 * mc.se, se=mc.se, bound=bound))
    rng = RngStream(seed, 4).generator()
    for j in range(configs):
        centers = rng.uniform(0, 1, (4, 2))
        radii = rng.uniform(0.1, 0.4, 4)
        balls = [Ball(tuple(c), float(rr)) for c, rr in zip(centers, radii)]
        mc, bound = mc_check_covariance(*balls, 5.0, reps, RngStream(seed, 5).child(j))
        out.append(_record("covariance_bound", {"case": f"random_{j}", "lambda": 5.0, "reps": reps}, mc.value,
                           bound + 4 * mc.se, mc.value <= bound + 4 * mc.se, se=mc.se, bound=bound))
    return out


# --- approximation inequalities -------------------------------------------------

def approx_checks(seed: int, reps: int = 400) -> list[dict]:
    out = [c.to_dict() for c in approx.inequality_grid()]
    model = ModelSpec.germ_grain(1, 0.5, process="binomial")
    n = 10_000
    root = RngStream(seed, 6)
    for i, k in enumerate((n, int(1.05 * n), int(0.95 * n))):
        mc, predicted, bound = approx.poissonization_bias(model, n, k, reps, root.child(i))
        err = abs(mc.value - predicted)
        tol = bound + 4 * mc.se
        out.append({"params": {"check": "bias", "n": n, "k": k, "reps": reps}, "lhs": err, "rhs": tol,
                    "margin": tol - err, "pass": bool(err <= tol)})
        monotone = bool(np.all(approx.coupled_differences(model, n, k, 20, root.child(10 + i).derive_seed())
                               * np.sign(k - n) >= 0))
        out.append({"params": {"check": "bias_sign", "n": n, "k": k}, "lhs": 0.0, "rhs": 0.0, "margin": 0.0,
                    "pass": monotone})
    constant = approx.calibrate_variance_constant(model, reps, root.child(20), grid=approx.PILOT_GRID)
    for i, k in enumerate((n + 100, n + 200, n - 100)):
        var, bound = approx.poissonization_variance(model, n, k, reps, root.child(30 + i), constant)
        tol = bound + 4 * var.se
        out.append({"params": {"check": "variance", "n": n, "k": k, "reps": reps, "constant": constant},
                    "lhs": var.value, "rhs": tol, "margin": tol - var.value, "pass": bool(var.value <= tol)})
    return out


def run_suite(name: str, seed: int) -> list[dict]:
    if name == "malliavin":
        return malliavin_checks(seed)
    if name == "moments":
        return moment_checks(seed)
    if name == "approx":
        return approx_checks(seed)
    if name == "all":
        return [dict(r, suite=s) for s in SUITES for r in run_suite(s, seed)]
    raise ValueError(f"unknown suite {name!r}")


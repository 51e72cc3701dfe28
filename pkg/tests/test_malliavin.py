from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from avoidance_clt.approx import variance_estimate
from avoidance_clt.errors import InvalidArgumentError
from avoidance_clt.functionals import ModelSpec, QuadratureSpec, avoidance_value, sample_model_pattern
from avoidance_clt.geometry import Window
from avoidance_clt.malliavin import (chaos_term_indicator, chaos_variance_indicator, difference_indicator,
                                     difference_operator, difference_pathwise, inner_product_DF_DL,
                                     inner_product_inflation, inverse_ou_difference, mehler_integral)
from avoidance_clt.moments import jackknife_covariance
from avoidance_clt.ppp import PointPattern
from avoidance_clt.rng import RngStream

GG1 = ModelSpec.germ_grain(1, 0.5)
Q1 = ModelSpec.quantization(1, 1.0)
Q2 = ModelSpec.quantization(1, 2.0)
EXACT = QuadratureSpec("exact")


def quad_oracle(k, a):
    return integrate.quad(lambda t: t**k * math.exp(-a * t), 0, 1, epsabs=0, epsrel=1e-13, limit=200)[0]


# --- Mehler integral -------------------------------------------------------------

def test_mehler_trivial_values():
    assert mehler_integral(0, 0.0) == 1.0
    assert mehler_integral(1, 0.0) == 0.5
    assert mehler_integral(0, 1.0) == pytest.approx(1 - math.exp(-1), rel=1e-14)


def test_mehler_k3_a2_against_quadrature():
    assert mehler_integral(3, 2.0) == pytest.approx(quad_oracle(3, 2.0), rel=1e-12)
    assert mehler_integral(3, 2.0) == pytest.approx(0.0535787, abs=1e-7)


@pytest.mark.parametrize("k", [0, 1, 2, 5, 10, 30, 100])
@pytest.mark.parametrize("a", [1e-9, 0.3, 0.999, 1.0, 1.5, 7.0, 40.0, 200.0])
def test_mehler_against_quadrature_grid(k, a):
    assert mehler_integral(k, a) == pytest.approx(quad_oracle(k, a), rel=1e-10)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 80), st.floats(0.0, 60.0))
def test_mehler_bounds(k, a):
    v = mehler_integral(k, a)
    assert 0 < v <= 1
    assert math.exp(-a) / (k + 1) * (1 - 1e-12) <= v <= 1 / (k + 1) * (1 + 1e-12)
    assert v <= math.exp(-a / 2) + 2.0**-k + 1e-15


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 60), st.floats(0.0, 30.0), st.floats(0.01, 5.0))
def test_mehler_strictly_decreasing(k, a, da):
    assert mehler_integral(k + 1, a) < mehler_integral(k, a)
    assert mehler_integral(k, a + da) < mehler_integral(k, a)


def test_mehler_vectorized_matches_scalar():
    ks = np.array([0, 3, 3, 7, 50])
    a = np.array([0.5, 2.0, 2.0, 10.0, 3.0])
    assert np.allclose(mehler_integral(ks, a), [mehler_integral(int(k), float(x)) for k, x in zip(ks, a)], rtol=1e-14)


def test_mehler_rejects_negative():
    with pytest.raises(InvalidArgumentError):
        mehler_integral(-1, 1.0)
    with pytest.raises(InvalidArgumentError):
        mehler_integral(1, -1.0)


# --- chaos terms -------------------------------------------------------------------

def test_chaos_examples():
    assert chaos_term_indicator(1, 3, 2.0) == pytest.approx(-math.exp(-2), rel=1e-14)
    assert chaos_term_indicator(2, 0, 1.0) == pytest.approx(math.exp(-1) / 2, rel=1e-14)
    for a in range(5):
        assert chaos_term_indicator(1, a, float(a)) == pytest.approx(0.0, abs=1e-15)


def test_chaos_large_order_log_space_matches_exact():
    from fractions import Fraction

    n, k, a = 25, 7, 3
    s = sum(Fraction((-1) ** j * math.comb(n, j) * math.comb(k, j) * math.factorial(j) * a ** (n - j))
            for j in range(min(n, k) + 1))
    exact = float(s / math.factorial(n)) * math.exp(-a)
    assert chaos_term_indicator(n, k, float(a)) == pytest.approx(exact, rel=1e-9)


def test_chaos_terms_reconstruct_indicator():
    # 1(k = 0) = E + sum of all chaos terms, truncated where terms are negligible
    a = 1.0
    for k in range(6):
        total = math.exp(-a) + sum(chaos_term_indicator(n, k, a) for n in range(1, 60))
        assert total == pytest.approx(float(k == 0), abs=1e-12)


def test_chaos_variance_orthogonality_and_completeness():
    draws = 100_000
    k = RngStream(40).generator().poisson(1.0, draws)
    terms = {n: chaos_term_indicator(n, k, 1.0) for n in range(1, 5)}
    for n, x in terms.items():
        var = variance_estimate(x)
        assert abs(var.value - math.exp(-2) / math.factorial(n)) <= 4 * var.se
        assert abs(x.mean()) <= 4 * x.std() / math.sqrt(draws)
    for n in range(1, 5):
        for m in range(n + 1, 5):
            cov, se = jackknife_covariance(terms[n], terms[m])
            assert abs(cov) <= 4 * se
    partial = math.fsum(chaos_variance_indicator(n, 1.0) for n in range(1, 11))
    assert partial == pytest.approx(math.exp(-1) - math.exp(-2), abs=1e-6)


def test_chaos_residual_decreases():
    k = RngStream(41).generator().poisson(1.0, 50_000)
    f = (k == 0) - math.exp(-1)
    resid = []
    acc = np.zeros(k.size)
    for n in range(1, 7):
        acc = acc + chaos_term_indicator(n, k, 1.0)
        resid.append(np.mean((f - acc) ** 2))
    assert all(b < a for a, b in zip(resid, resid[1:]))


def test_chaos_rejects_order_zero():
    with pytest.raises(InvalidArgumentError):
        chaos_term_indicator(0, 1, 1.0)


def test_difference_indicator():
    assert difference_indicator(0, True) == -1
    assert difference_indicator(0, False) == 0
    assert difference_indicator(2, True) == 0


# --- difference operators ----------------------------------------------------------

@pytest.mark.parametrize("model,scale", [(GG1, 100.0), (Q1, 50.0), (Q2, 50.0)])
def test_difference_closed_form_matches_pathwise(model, scale):
    for i in range(5):
        stream = RngStream(42, i)
        pat = sample_model_pattern(model, scale, stream.child(0))
        for z in stream.child(1).generator().uniform(-0.05, 1.05, 50):
            closed = difference_operator(model, pat, z, scale, EXACT)
            path = difference_pathwise(model, pat, z, scale, EXACT)
            assert closed == pytest.approx(path, abs=1e-10)
            assert closed <= 1e-15


def test_difference_plane_closed_form_matches_pathwise():
    model = ModelSpec.germ_grain(2, 0.5)
    pat = sample_model_pattern(model, 100.0, RngStream(43))
    rng = RngStream(44).generator()
    for j in range(50):
        z = rng.uniform(-0.05, 1.05, 2)
        quad = QuadratureSpec("monte-carlo", 20_000, RngStream(45, j))
        closed = difference_operator(model, pat, z, 100.0, quad)
        path = difference_pathwise(model, pat, z, 100.0, QuadratureSpec("lattice", 250_000))
        # closed form integrates over the local ball only: compare with the MC spread
        se = math.sqrt(0.25 * math.pi * 0.05**2 * 4 * 0.05**2 / 20_000) + 1e-4
        assert abs(closed - path) <= 4 * se


def test_difference_far_from_domain_is_zero():
    pat = sample_model_pattern(GG1, 100.0, RngStream(46))
    assert difference_operator(GG1, pat, 3.0, 100.0, EXACT) == 0.0
    model = ModelSpec.germ_grain(2, 0.5)
    pat2 = sample_model_pattern(model, 100.0, RngStream(46))
    assert difference_operator(model, pat2, (5.0, 5.0), 100.0, QuadratureSpec("monte-carlo", 100)) == 0.0
    assert inverse_ou_difference(GG1, pat, 3.0, 100.0, EXACT) == 0.0


def test_indicator_drop_when_set_empty():
    # one interval shape of unit mass whose region is empty: adding a point inside removes all of it
    model = ModelSpec.germ_grain(1, 0.5, domain=Window((0.0,), (1e-9,)))
    empty = PointPattern(np.empty((0, 1)), Window.cube(1, -1, 2))
    d = difference_pathwise(model, empty, 0.0, 1.0, EXACT)
    assert d == pytest.approx(-1e-9, rel=1e-6)


def test_inverse_ou_indicator_value():
    # a point far from everything: the shape around x covers mass mu = scale * 2 r with no points
    scale = 1.0
    model = ModelSpec.germ_grain(1, 0.25, domain=Window((0.0,), (1e-7,)))
    empty = PointPattern(np.empty((0, 1)), Window.cube(1, -1, 2))
    v = inverse_ou_difference(model, empty, 0.0, scale, EXACT) / 1e-7
    assert v == pytest.approx(mehler_integral(0, 0.5), rel=1e-5)
    assert mehler_integral(0, 1.0) == pytest.approx(0.632121, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-0.1, 1.1))
def test_inverse_ou_nonnegative(seed, z):
    for model, scale in ((GG1, 80.0), (Q1, 40.0)):
        pat = sample_model_pattern(model, scale, RngStream(seed), min_inflation=inner_product_inflation(model, scale))
        assert inverse_ou_difference(model, pat, z, scale, EXACT) >= 0.0


# --- variance identity ---------------------------------------------------------------

def test_inner_product_zero_when_saturated():
    pts = np.linspace(-0.2, 1.2, 2000)[:, None]
    pat = PointPattern(pts, Window.cube(1, -0.3, 1.3))
    est = inner_product_DF_DL(GG1, pat, 100.0, 200, QuadratureSpec("monte-carlo", 800), RngStream(0))
    assert est.value == 0.0


def variance_identity(model, scale, reps, seed):
    infl = inner_product_inflation(model, scale)
    f, ip = [], []
    for i in range(reps):
        stream = RngStream(seed, i)
        pat = sample_model_pattern(model, scale, stream.child(0), min_inflation=infl)
        f.append(avoidance_value(model, pat, scale, EXACT))
        ip.append(inner_product_DF_DL(model, pat, scale, 200, QuadratureSpec("monte-carlo", 800), stream.child(1)).value)
    ip = np.asarray(ip)
    var = variance_estimate(f)
    se = math.hypot(ip.std(ddof=1) / math.sqrt(reps), var.se)
    return ip.mean(), var.value, se


@pytest.mark.parametrize("model,scale", [(GG1, 100.0), (Q1, 50.0)])
def test_variance_identity(model, scale):
    lhs, rhs, se = variance_identity(model, scale, 2000, 47)
    assert abs(lhs - rhs) <= 3 * se


def test_variance_identity_detects_wrong_scale():
    # the identity is sharp: doubling the intensity factor must break it
    lhs, rhs, se = variance_identity(GG1, 100.0, 2000, 48)
    assert abs(2 * lhs - rhs) > 3 * se
    assert stats.norm.sf(abs(lhs - rhs) / se) > 0.001

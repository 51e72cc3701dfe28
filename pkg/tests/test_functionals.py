from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avoidance_clt.errors import EmptyPatternError, InvalidArgumentError, OutOfRegimeError
from avoidance_clt.functionals import (ModelSpec, QuadratureSpec, avoidance_value, evaluate_replicate,
                                       germ_grain_volume, mean_avoidance, mean_binomial_avoidance,
                                       mean_variance_closed, quantization_error, replicate_functional,
                                       sample_model_pattern)
from avoidance_clt.geometry import Window
from avoidance_clt.ppp import PointPattern, sample_binomial, sample_homogeneous
from avoidance_clt.rng import RngStream

GG1 = ModelSpec.germ_grain(1, 0.5)
GG2 = ModelSpec.germ_grain(2, 0.5)
Q1 = ModelSpec.quantization(1, 1.0)
EXACT = QuadratureSpec("exact")


def mean_within(samples, target, k=3.0):
    x = np.asarray(samples, dtype=float)
    se = x.std(ddof=1) / math.sqrt(x.size)
    assert abs(x.mean() - target) <= k * se, (x.mean(), target, se)


# --- closed-form means -----------------------------------------------------------

def test_closed_means():
    assert mean_variance_closed(GG1, 100.0, budget=1000)[0] == pytest.approx(100 * (1 - math.exp(-1)), rel=1e-12)
    assert mean_variance_closed(GG1, 100.0, budget=1000)[0] == pytest.approx(63.2121, abs=1e-4)
    assert GG2.natural_value(mean_avoidance(GG2), 100.0) == pytest.approx(100 * (1 - math.exp(-math.pi / 4)))
    q22 = ModelSpec.quantization(2, 2.0)
    assert q22.natural_value(mean_avoidance(q22), 1.0) == pytest.approx(1 / math.pi, rel=1e-12)
    q12 = ModelSpec.quantization(1, 2.0)
    assert q12.natural_value(mean_avoidance(q12), 1.0) == pytest.approx(0.5, rel=1e-12)


def test_closed_mean_zero_radius():
    m = ModelSpec.germ_grain(1, 0.0)
    assert mean_variance_closed(m, 100.0, budget=1000)[0] == 0.0


def test_closed_mean_rejects_binomial():
    with pytest.raises(OutOfRegimeError):
        mean_variance_closed(ModelSpec.germ_grain(1, 0.5, "binomial"), 100.0)


def test_binomial_mean_line_matches_integral():
    m = ModelSpec.germ_grain(1, 0.5, "binomial")
    n = 50
    rho = 0.5 / n
    x = (np.arange(400_000) + 0.5) / 400_000
    cov = np.minimum(x + rho, 1) - np.maximum(x - rho, 0)
    assert mean_binomial_avoidance(m, n) == pytest.approx(np.mean((1 - cov) ** n), rel=1e-8)


# --- avoidance value ---------------------------------------------------------------

def test_empty_pattern_avoids_everything():
    empty = PointPattern(np.empty((0, 2)), Window.cube(2))
    assert avoidance_value(GG2, empty, 100.0, QuadratureSpec("lattice", 1000)) == 1.0
    empty1 = PointPattern(np.empty((0, 1)), Window.cube(1))
    assert avoidance_value(GG1, empty1, 100.0, EXACT) == 1.0
    assert germ_grain_volume(empty1, 0.5, Window.cube(1), EXACT) == 0.0


def test_dense_pattern_covers_everything():
    pts = np.linspace(-0.1, 1.1, 1000)[:, None]
    pat = PointPattern(pts, Window.cube(1, -0.2, 1.2))
    assert avoidance_value(GG1, pat, 100.0, EXACT) == 0.0
    assert avoidance_value(GG1, pat, 100.0, QuadratureSpec("monte-carlo", 1000, RngStream(0))) == 0.0


def test_single_germ_volume():
    box = Window.cube(2)
    pat = PointPattern(np.array([[0.5, 0.5]]), box)
    v = germ_grain_volume(pat, 0.1, box, QuadratureSpec("lattice", 1_000_000))
    assert v == pytest.approx(math.pi * 0.01, rel=5e-3)
    assert germ_grain_volume(PointPattern(np.array([[0.5]]), Window.cube(1)), 0.1, Window.cube(1), EXACT) == \
        pytest.approx(0.2)


def test_quantization_single_point():
    pat = PointPattern(np.array([[0.5]]), Window.cube(1))
    assert quantization_error(pat, 1.0, EXACT) == pytest.approx(0.25, abs=1e-15)
    assert quantization_error(pat, 1.0, QuadratureSpec("lattice", 10_000)) == pytest.approx(0.25, abs=1e-8)
    assert quantization_error(pat, 2.0, EXACT) == pytest.approx(1 / 12, abs=1e-15)


def test_quantization_lattice_pattern_near_zero():
    grid = QuadratureSpec("lattice", 400)
    nodes = grid.nodes(Window.cube(2))
    pat = PointPattern(nodes, Window.cube(2))
    assert quantization_error(pat, 1.0, grid) == pytest.approx(0.0, abs=1e-12)


def test_quantization_empty_pattern_raises():
    with pytest.raises(EmptyPatternError):
        quantization_error(PointPattern(np.empty((0, 1)), Window.cube(1)), 1.0, EXACT)
    with pytest.raises(EmptyPatternError):
        avoidance_value(Q1, PointPattern(np.empty((0, 1)), Window.cube(1)), 10.0, QuadratureSpec("lattice", 100))


def test_pathwise_identities():
    for i in range(10):
        stream = RngStream(20, i)
        pat = sample_model_pattern(GG1, 100.0, stream)
        f = avoidance_value(GG1, pat, 100.0, EXACT)
        g = germ_grain_volume(pat, 0.5 / 100.0, Window.cube(1), EXACT)
        assert 100.0 * (1 - f) == pytest.approx(100.0 * g, abs=1e-10)
        q = sample_model_pattern(Q1, 50.0, stream.child(5))
        h = quantization_error(q, 1.0, EXACT)
        assert h == pytest.approx(50.0 ** -1.0 * avoidance_value(Q1, q, 50.0, EXACT), rel=1e-10)


def test_pathwise_identity_plane():
    quad = QuadratureSpec("monte-carlo", 20_000, RngStream(3))
    pat = sample_model_pattern(GG2, 100.0, RngStream(21))
    f = avoidance_value(GG2, pat, 100.0, quad)
    g = germ_grain_volume(pat, 0.05, Window.cube(2), quad)
    assert g == pytest.approx(1 - f, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-0.2, 1.2))
def test_adding_a_point_is_monotone(seed, z):
    pat = sample_model_pattern(GG1, 30.0, RngStream(seed))
    wide = Window.cube(1, -0.2, 1.2)
    more = PointPattern(np.vstack([pat.points, [[z]]]), wide)
    assert avoidance_value(GG1, more, 30.0, EXACT) <= avoidance_value(GG1, pat, 30.0, EXACT) + 1e-15
    t = 0.5 / 30.0
    assert germ_grain_volume(more, t, Window.cube(1), EXACT) >= germ_grain_volume(pat, t, Window.cube(1), EXACT) - 1e-15
    qpat = sample_model_pattern(Q1, 30.0, RngStream(seed))
    qmore = PointPattern(np.vstack([qpat.points, [[z]]]), Window.union_box(qpat.window, wide))
    assert quantization_error(qmore, 1.0, EXACT) <= quantization_error(qpat, 1.0, EXACT) + 1e-15


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_avoidance_bounds(seed):
    pat = sample_model_pattern(GG2, 50.0, RngStream(seed))
    f = avoidance_value(GG2, pat, 50.0, QuadratureSpec("lattice", 2500))
    assert 0.0 <= f <= GG2.domain.volume() * GG2.mark_mass
    g = GG2.natural_value(f, 50.0)
    assert 0.0 <= g <= 50.0 * GG2.domain.volume()


def test_lattice_and_monte_carlo_agree():
    rng_budget = 4096
    for i in range(20):
        pat = sample_model_pattern(GG2, 50.0, RngStream(22, i))
        lat = avoidance_value(GG2, pat, 50.0, QuadratureSpec("lattice", rng_budget))
        reps = [avoidance_value(GG2, pat, 50.0, QuadratureSpec("monte-carlo", rng_budget, RngStream(23, i).child(j)))
                for j in range(8)]
        mc = float(np.mean(reps))
        se = math.sqrt(mc * (1 - mc) / (rng_budget * 8))
        assert abs(lat - mc) <= 4 * math.sqrt(2) * se + 1e-3, (i, lat, mc)


# --- replicates --------------------------------------------------------------------

def test_single_replicate_matches_direct_evaluation():
    quad = QuadratureSpec.auto(1)
    assert replicate_functional(GG1, 100.0, 1, 5, quad) == [evaluate_replicate(GG1, 100.0, 5, 0, quad)]


@pytest.mark.parametrize("model,scale", [(GG1, 100.0), (GG2, 50.0), (Q1, 50.0),
                                         (ModelSpec.quantization(2, 1.0), 50.0),
                                         (ModelSpec.germ_grain(1, 0.5, "binomial"), 500)])
def test_replicates_identical_across_worker_counts(model, scale):
    quad = QuadratureSpec.auto(model.dimension, 2000)
    one = replicate_functional(model, scale, 130, 9, quad, parallelism=1)
    eight = replicate_functional(model, scale, 130, 9, quad, parallelism=8)
    assert one == eight


def test_replicate_rejects_zero_reps():
    with pytest.raises(InvalidArgumentError):
        replicate_functional(GG1, 100.0, 0, 0, EXACT)


def test_germ_grain_mean_line():
    vals = replicate_functional(GG1, 100.0, 2000, 1, QuadratureSpec.auto(1), parallelism=4)
    mean_within(vals, 100 * (1 - math.exp(-1)))


def test_germ_grain_mean_plane():
    vals = replicate_functional(GG2, 100.0, 2000, 2, QuadratureSpec("monte-carlo", 100_000), parallelism=8)
    mean_within(vals, 100 * (1 - math.exp(-math.pi / 4)))


def test_quantization_means():
    q12 = ModelSpec.quantization(1, 2.0)
    mean_within(replicate_functional(q12, 1.0, 2000, 3, QuadratureSpec.auto(1), parallelism=4), 0.5)
    q22 = ModelSpec.quantization(2, 2.0)
    mean_within(replicate_functional(q22, 1.0, 2000, 4, QuadratureSpec("monte-carlo", 20_000), parallelism=8),
                1 / math.pi)


def test_binomial_mean_matches_closed_form():
    m = ModelSpec.germ_grain(1, 0.5, "binomial")
    vals = replicate_functional(m, 1000, 3000, 5, QuadratureSpec.auto(1), parallelism=4)
    mean_within(vals, m.natural_value(mean_binomial_avoidance(m, 1000), 1000))


def test_binomial_pattern_stays_in_domain():
    m = ModelSpec.germ_grain(2, 0.5, "binomial")
    pat = sample_model_pattern(m, 100, RngStream(0))
    assert len(pat) == 100 and np.all(m.domain.contains(pat.points))
    assert np.array_equal(pat.points, sample_binomial(m.domain, 100, RngStream(0)).points)
    with pytest.raises(InvalidArgumentError):
        sample_model_pattern(m, 10.5, RngStream(0))


def test_germ_grain_window_is_inflated():
    pat = sample_model_pattern(GG1, 4.0, RngStream(1))
    assert pat.window.lower[0] == pytest.approx(-0.125) and pat.window.upper[0] == pytest.approx(1.125)


def test_model_round_trip():
    for m in (GG1, GG2, Q1, ModelSpec.germ_grain(1, 0.5, "binomial")):
        assert ModelSpec.from_dict(m.to_dict()) == m


def test_model_validation():
    with pytest.raises(InvalidArgumentError):
        ModelSpec.from_dict({"kind": "voronoi", "dim": 1})
    with pytest.raises(InvalidArgumentError):
        ModelSpec.germ_grain(1, 0.5, process="cox")
    with pytest.raises(InvalidArgumentError):
        QuadratureSpec("simpson", 10)
    with pytest.raises(InvalidArgumentError):
        QuadratureSpec("lattice", 0)
    with pytest.raises(InvalidArgumentError):
        avoidance_value(GG1, PointPattern(np.empty((0, 1)), Window.cube(1)), 0.0, EXACT)


def test_lattice_nodes_are_cell_centres():
    nodes = QuadratureSpec("lattice", 10).nodes(Window.cube(2))
    assert nodes.shape == (16, 2)
    assert sorted(set(nodes[:, 0].tolist())) == [0.125, 0.375, 0.625, 0.875]


@pytest.mark.parametrize("d,scale", [(2, 100.0), (2, 5000.0), (3, 200.0)])
def test_covered_fraction_paths_agree_with_brute_force(d, scale):
    from avoidance_clt.functionals import covered_fraction

    pat = sample_model_pattern(ModelSpec.germ_grain(d, 0.5), scale, RngStream(30, d))
    nodes = QuadratureSpec("monte-carlo", 5000, RngStream(31)).nodes(Window.cube(d))
    rho = 0.5 * scale ** (-1 / d)
    d2 = ((nodes[:, None] - pat.points[None]) ** 2).sum(axis=2)
    assert covered_fraction(pat, nodes, rho) == np.mean(d2.min(axis=1) < rho * rho)


def spacings_uncovered(n, reps, rng):
    """Uncovered length of [0, 1] by n uniform germs of radius 0.5/n, via normalized exponential spacings."""
    e = rng.exponential(size=(reps, n + 1))
    g = e / e.sum(axis=1, keepdims=True)
    r = 0.5 / n
    inner = np.maximum(g[:, 1:-1] - 2 * r, 0).sum(axis=1)
    return inner + np.maximum(g[:, 0] - r, 0) + np.maximum(g[:, -1] - r, 0)


def test_binomial_law_matches_spacings_oracle():
    n, reps = 1000, 4000
    model = ModelSpec.germ_grain(1, 0.5, "binomial")
    ours = 1 - np.asarray(replicate_functional(model, n, reps, 41, QuadratureSpec.auto(1))) / n
    oracle = spacings_uncovered(n, 40_000, np.random.default_rng(42))
    se = math.hypot(ours.std(ddof=1) / math.sqrt(reps), oracle.std(ddof=1) / math.sqrt(oracle.size))
    assert abs(ours.mean() - oracle.mean()) <= 3 * se
    assert ours.var(ddof=1) / oracle.var(ddof=1) == pytest.approx(1, abs=0.1)

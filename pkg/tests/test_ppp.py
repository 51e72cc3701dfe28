from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from avoidance_clt.errors import ContractViolationError, EmptyPatternError, InvalidArgumentError
from avoidance_clt.geometry import Ball, Window
from avoidance_clt.ppp import (GridIndex, PointPattern, count_in_ball, nearest_distance, read_csv, sample_binomial,
                               sample_homogeneous, sample_thinned, write_csv)
from avoidance_clt.rng import RngStream

SQUARE = Window.cube(2)


def counts(window, intensity, reps, box, seed=0):
    out = np.empty(reps, dtype=int)
    for i in range(reps):
        p = sample_homogeneous(window, intensity, RngStream(seed, i))
        out[i] = int(np.sum(box.contains(p.points))) if len(p) else 0
    return out


def test_homogeneous_count_mean_and_variance():
    c = counts(SQUARE, 100.0, 10_000, SQUARE)
    assert abs(c.mean() - 100) < 4 * math.sqrt(100 / 1e4) * 3
    assert abs(c.var(ddof=1) / 100 - 1) < 0.1


def test_homogeneous_disjoint_counts_uncorrelated():
    w = Window.cube(1, 0.0, 2.0)
    left, right = Window((0.0,), (1.0,)), Window((1.0,), (2.0,))
    a = np.empty(10_000)
    b = np.empty(10_000)
    for i in range(10_000):
        p = sample_homogeneous(w, 5.0, RngStream(1, i)).points
        a[i] = np.sum(left.contains(p))
        b[i] = np.sum(right.contains(p))
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.05
    assert abs(np.corrcoef(a, b)[0, 1]) < 3 / math.sqrt(1e4)


def test_homogeneous_invalid_intensity():
    for bad in (0.0, -1.0, math.inf):
        with pytest.raises(InvalidArgumentError):
            sample_homogeneous(SQUARE, bad, RngStream(0))


def test_homogeneous_deterministic():
    a = sample_homogeneous(SQUARE, 50.0, RngStream(9, 4)).points
    b = sample_homogeneous(SQUARE, 50.0, RngStream(9, 4)).points
    assert np.array_equal(a, b)


def test_superposition_count_law():
    reps = 4000
    tot = np.empty(reps, dtype=int)
    for i in range(reps):
        a = sample_homogeneous(SQUARE, 3.0, RngStream(2, i))
        b = sample_homogeneous(SQUARE, 4.0, RngStream(3, i))
        tot[i] = len(a.superpose(b))
    ks = np.arange(0, 16)
    observed = np.array([np.sum(tot == k) for k in ks[:-1]] + [np.sum(tot >= ks[-1])])
    probs = np.append(stats.poisson.pmf(ks[:-1], 7.0), stats.poisson.sf(ks[-2], 7.0))
    _, p = stats.chisquare(observed, probs * reps)
    assert p > 0.01


def test_binomial_empty_and_prefix():
    assert len(sample_binomial(SQUARE, 0, RngStream(0))) == 0
    small = sample_binomial(SQUARE, 30, RngStream(5, 1)).points
    big = sample_binomial(SQUARE, 300, RngStream(5, 1)).points
    assert np.array_equal(small, big[:30])


def test_binomial_subbox_mean():
    cube = Window.cube(3)
    sub = Window((0.0, 0.0, 0.0), (1.0, 0.5, 0.5))
    c = np.array([np.sum(sub.contains(sample_binomial(cube, 1000, RngStream(4, i)).points)) for i in range(10_000)])
    se = c.std(ddof=1) / math.sqrt(c.size)
    assert abs(c.mean() - 250) < 3 * se


def test_thinned_constant_intensity_matches_homogeneous():
    a = [len(sample_thinned(SQUARE, 20.0, lambda x: np.full(len(x), 20.0), RngStream(6, i))) for i in range(10_000)]
    b = [len(sample_homogeneous(SQUARE, 20.0, RngStream(7, i))) for i in range(10_000)]
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_thinned_zero_intensity_is_empty():
    for i in range(50):
        assert len(sample_thinned(SQUARE, 20.0, lambda x: np.zeros(len(x)), RngStream(8, i))) == 0


def test_thinned_linear_intensity_mean():
    c = np.array([len(sample_thinned(SQUARE, 40.0, lambda x: 40.0 * x[:, 0], RngStream(9, i))) for i in range(4000)])
    assert abs(c.mean() - 20.0) < 3 * c.std(ddof=1) / math.sqrt(c.size)


def test_thinned_contract_violation():
    with pytest.raises(ContractViolationError):
        sample_thinned(SQUARE, 20.0, lambda x: np.full(len(x), 30.0), RngStream(0))


def test_pattern_points_must_lie_in_window():
    with pytest.raises(InvalidArgumentError):
        PointPattern(np.array([[2.0, 0.5]]), SQUARE)


def test_count_and_nearest_small_cases():
    empty = PointPattern(np.empty((0, 2)), Window.cube(2, -3, 3))
    assert count_in_ball(empty, empty.index, Ball((0.0, 0.0), 1.0)) == 0
    with pytest.raises(EmptyPatternError):
        nearest_distance(empty, empty.index, (0.0, 0.0))
    one = PointPattern(np.array([[0.0, 0.0]]), Window.cube(2, -3, 3))
    assert count_in_ball(one, one.index, Ball((0.0, 0.0), 1.0)) == 1
    assert count_in_ball(one, one.index, Ball((2.0, 0.0), 1.0)) == 0
    assert nearest_distance(one, one.index, (1.0, 0.0)) == 1.0
    two = PointPattern(np.array([[0.0, 0.0], [3.0, 0.0]]), Window.cube(2, -3, 4))
    assert nearest_distance(two, two.index, (1.0, 0.0)) == 1.0


def test_open_ball_convention():
    p = PointPattern(np.array([[1.0, 0.0]]), Window.cube(2, -2, 2))
    assert count_in_ball(p, p.index, Ball((0.0, 0.0), 1.0)) == 0


@pytest.mark.parametrize("d", [1, 2, 3])
def test_grid_matches_brute_force(d):
    win = Window.cube(d)
    pat = sample_homogeneous(win, 1000.0, RngStream(10, d))
    rng = np.random.default_rng(d)
    centers = rng.uniform(-0.2, 1.2, (100, d))
    radii = rng.uniform(0.0, 0.3, 100)
    grid = pat.index.count_in_balls(centers, radii)
    brute = np.array([np.sum(np.sum((pat.points - c) ** 2, axis=1) < r * r) for c, r in zip(centers, radii)])
    assert np.array_equal(grid, brute)
    q = rng.uniform(-0.5, 1.5, (100, d))
    nn = pat.index.nearest_distances(q)
    assert np.allclose(nn, pat.index.nearest_brute(q), rtol=0, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 200), st.integers(0, 1000), st.floats(0.01, 2.0))
def test_grid_equivalence_random(n, seed, side):
    rng = np.random.default_rng(seed)
    win = Window.cube(2)
    pat = PointPattern(rng.random((n, 2)), win)
    idx = GridIndex(pat, side=side)
    q = rng.uniform(-1, 2, (20, 2))
    r = rng.uniform(0, 0.5, 20)
    brute_c = np.array([np.sum(np.sum((pat.points - c) ** 2, axis=1) < rr * rr) for c, rr in zip(q, r)])
    assert np.array_equal(idx.count_in_balls(q, r), brute_c)
    brute_n = np.sqrt(((q[:, None] - pat.points[None]) ** 2).sum(axis=2)).min(axis=1)
    assert np.allclose(idx.nearest_distances(q), brute_n, rtol=0, atol=1e-12)


def test_grid_buckets_partition_points():
    pat = sample_homogeneous(SQUARE, 300.0, RngStream(11))
    idx = pat.index
    seen = np.concatenate([idx.bucket(tuple(c)) for c in np.unique(idx._cell_coords(pat.points), axis=0)])
    assert sorted(seen.tolist()) == list(range(len(pat)))


def test_csv_round_trip(tmp_path):
    pat = sample_homogeneous(Window.cube(2, -1, 1), 30.0, RngStream(12))
    path = tmp_path / "p.csv"
    write_csv(pat, path, 12)
    pts, dim, seed = read_csv(path)
    assert dim == 2 and seed == 12
    assert np.array_equal(pts, pat.points)
    assert path.read_text().splitlines()[0] == "dim,seed"

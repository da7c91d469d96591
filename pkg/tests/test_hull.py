import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memmpc.exceptions import DegenerateGeometry, StaleLocation
from memmpc.hull import (ConvexHullObject, HullLearner, brute_force_lower_hull,
                         brute_force_outer_hull, init_hull, live_facet_sets, normal,
                         qhull_lower_hull)


def _U(v):
    return np.array([float(v)])


def _random_hull(n, count, seed, convex_J=False):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(count, n))
    J = (X ** 2).sum(1) + 0.1 * rng.uniform(size=count) if convex_J else rng.uniform(size=count)
    hull = init_hull(X[:n + 1], [_U(j) for j in range(n + 1)], J[:n + 1])
    for j in range(n + 1, count):
        hull.insert(X[j], _U(j), J[j], 0)
    return hull


# --- init_hull -------------------------------------------------------------------

def test_init_1d():
    hull = init_hull([[0.0], [2.0]], [_U(0), _U(1)], [1.0, 1.0])
    low, out = live_facet_sets(hull)
    assert low == {(0, 1)}
    assert out == {(0,), (1,)}


def test_init_2d():
    hull = init_hull([[0, 0], [1, 0], [0, 1]], [_U(0)] * 3, [0.0, 1.0, 2.0])
    low, out = live_facet_sets(hull)
    assert len(low) == 1 and len(out) == 3
    assert out == {(0, 1), (0, 2), (1, 2)}
    assert hull.audit() == []


def test_init_duplicate_states_deferred():
    with pytest.raises(DegenerateGeometry):
        init_hull([[0.0], [0.0]], [_U(0), _U(1)], [0.0, 1.0])
    learner = HullLearner(1)
    learner.add([0.0], _U(0), 0.0)
    learner.add([0.0], _U(1), 1.0)
    assert not learner.ready and learner.size == 2
    learner.add([1.0], _U(2), 0.5)
    assert learner.ready


def test_init_wrong_count():
    with pytest.raises(ValueError):
        init_hull([[0.0, 0.0], [1.0, 0.0]], [_U(0)] * 2, [0, 0])


# --- normal ------------------------------------------------------------------------

def test_normal_diagonal():
    np.testing.assert_allclose(normal([[1, 0], [0, 1]], [0, 0]), np.array([1, 1]) / math.sqrt(2))


def test_normal_axis():
    np.testing.assert_allclose(normal([[0, 0], [1, 0]], [0, 1]), [0, -1], atol=1e-15)


def test_normal_3d():
    np.testing.assert_allclose(normal([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [0, 0, 1]),
                               [0, 0, -1], atol=1e-15)


def test_normal_degenerate():
    with pytest.raises(DegenerateGeometry):
        normal([[0, 0], [1, 0]], [2, 0])


@settings(max_examples=100)
@given(st.integers(2, 4), st.integers(0, 10 ** 6))
def test_normal_orthogonal_and_oriented(p, seed):
    rng = np.random.default_rng(seed)
    A, x = rng.normal(size=(p, p)), rng.normal(size=p)
    try:
        d = normal(A, x)
    except DegenerateGeometry:
        return
    assert abs(np.linalg.norm(d) - 1) < 1e-12
    assert np.abs((A[1:] - A[0]) @ d).max() < 1e-9 * max(1.0, np.abs(A).max())
    assert d @ (x - A[0]) < 0


# --- get_facets / points_in_facet --------------------------------------------------

def test_get_facets_intersection():
    hull = ConvexHullObject(2)
    # 0-based version of G(1)={1,2}, G(2)={2,3}, G(4)={}
    hull.G["xJ"] = [[0, 1], [1, 2], [], []]
    assert hull.get_facets([0, 1]) == [1]
    assert hull.get_facets([0]) == [0, 1]
    assert hull.get_facets([0, 3]) == []


@pytest.fixture
def triangle():
    return init_hull([[0, 0], [1, 0], [0, 1]], [_U(0), _U(1), _U(2)], [0.0, 1.0, 2.0])


def test_points_in_facet(triangle):
    assert triangle.points_in_facet([0.2, 0.2], 0, 0)
    assert not triangle.points_in_facet([-1, -1], 0, 0)
    assert triangle.points_in_facet([0.0, 0.0], 0, 0)


# --- find_intersection / find_conv_comb ----------------------------------------

@pytest.fixture
def big_triangle():
    return init_hull([[0, 0], [2, 0], [0, 2]], [_U(0), _U(1), _U(2)], [0.0, 0.0, 0.0])


def test_find_intersection_hand(big_triangle):
    s, E = big_triangle.find_intersection(np.array([0.0, 1.0]), np.array([2.0, 0.0]), 0.0, 0,
                                          (0, 2))
    assert s == pytest.approx(0.5)
    assert set(E) == {1, 2}


def test_find_intersection_through_vertex(big_triangle):
    s, E = big_triangle.find_intersection(np.array([0.0, 1.0]), np.array([2.0, -1.0]), 0.0, 0,
                                          (0, 2))
    assert s == pytest.approx(1.0)
    assert 1 in E and set(E) in ({0, 1}, {1, 2})


def test_find_intersection_parallel_edge(big_triangle):
    s, E = big_triangle.find_intersection(np.array([0.0, 1.0]), np.array([1.0, -1.0]), 0.0, 0,
                                          (0, 2))
    assert s == pytest.approx(1.0)
    assert set(E) == {0, 1}


def test_conv_comb(triangle):
    np.testing.assert_allclose(triangle.find_conv_comb((0, 1, 2), [0.25, 0.25]), [0.5, 0.25, 0.25])
    np.testing.assert_allclose(triangle.find_conv_comb((0, 1, 2), [1.0, 0.0]), [0, 1, 0],
                               atol=1e-15)


@settings(max_examples=100)
@given(st.integers(1, 4), st.integers(0, 10 ** 6))
def test_conv_comb_residual(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n + 1, n))
    if np.linalg.svd(X[1:] - X[0], compute_uv=False).min() < 1e-2:
        return
    hull = init_hull(X, [_U(0)] * (n + 1), np.zeros(n + 1))
    w = rng.dirichlet(np.ones(n + 1))
    x = w @ X
    c = hull.find_conv_comb(tuple(range(n + 1)), x)
    assert np.abs(c @ X - x).max() <= 1e-10 * max(1.0, np.abs(X).max())
    assert np.all(c >= -1e-10) and np.all(c <= 1 + 1e-10)


# --- generate_sw -----------------------------------------------------------------

@pytest.fixture
def line3():
    a, b, c = np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([3.0, 3.0])
    hull = init_hull([[0.0], [2.0]], [a, b], [1.0, 0.0])
    hull.insert([4.0], c, 1.0)
    return hull, (a, b, c)


def test_generate_sw_interior(line3):
    hull, (a, b, c) = line3
    res = hull.generate_sw([1.0], 0)
    assert res.inside
    np.testing.assert_allclose(res.U, (a + b) / 2)
    assert res.value == pytest.approx(0.5)
    assert set(hull.facets["xJ"][res.F - 1]) == {0, 1}


def test_generate_sw_at_vertex(line3):
    hull, (a, b, c) = line3
    res = hull.generate_sw([2.0], 0)
    np.testing.assert_allclose(res.U, b)
    assert sorted(np.round(res.weights, 12)) == [0.0, 1.0]


def test_generate_sw_outside(line3):
    hull, (a, b, c) = line3
    res = hull.generate_sw([5.0], 0)
    assert res.F < 0 and not res.inside
    assert hull.facets["x"][-res.F - 1] == (2,)
    np.testing.assert_allclose(res.U, c)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(0, 10 ** 6))
def test_walk_agrees_with_exhaustive_location(n, seed):
    hull = _random_hull(n, 25, seed)
    rng = np.random.default_rng(seed + 1)
    for _ in range(20):
        x = rng.uniform(-1.3, 1.3, size=n)
        a = hull.generate_sw(x, int(rng.integers(hull.count)))
        b = hull.locate_exhaustive(x)
        assert a.inside == b.inside
        if a.inside:
            assert a.value == pytest.approx(b.value, abs=1e-9)


# --- update_ch -------------------------------------------------------------------

def test_update_splits_facet():
    hull = init_hull([[0.0], [2.0]], [_U(0), _U(1)], [1.0, 1.0])
    loc = hull.generate_sw([1.0], 0)
    hull.update_ch([1.0], _U(2), 0.0, loc.F)
    low, out = live_facet_sets(hull)
    assert low == {(0, 2), (1, 2)}
    assert out == {(0,), (1,)}
    assert hull.audit() == []


def test_update_outside():
    hull = init_hull([[0.0], [2.0]], [_U(0), _U(1)], [1.0, 1.0])
    loc = hull.generate_sw([3.0], 0)
    assert loc.F < 0
    hull.update_ch([3.0], _U(2), 1.0, loc.F)
    low, out = live_facet_sets(hull)
    assert out == {(0,), (2,)}
    assert (1, 2) in low
    assert hull.audit() == []


def test_update_on_facet_splits():
    hull = init_hull([[0.0], [2.0]], [_U(0), _U(1)], [1.0, 1.0])
    loc = hull.generate_sw([1.0], 0)
    hull.update_ch([1.0], _U(2), 1.0, loc.F)
    low, _ = live_facet_sets(hull)
    assert low == {(0, 2), (1, 2)}


def test_update_rejects_point_above():
    hull = init_hull([[0.0], [2.0]], [_U(0), _U(1)], [1.0, 1.0])
    loc = hull.generate_sw([1.0], 0)
    before = hull.dumps()
    with pytest.raises(StaleLocation):
        hull.update_ch([1.0], _U(2), 2.0, loc.F)
    assert hull.dumps() == before
    ok, _ = hull.insert([1.0], _U(2), 2.0)
    assert not ok and hull.count == 2


def test_update_rejects_wrong_location(line3):
    hull, _ = line3
    loc = hull.generate_sw([1.0], 0)
    with pytest.raises(StaleLocation):
        hull.update_ch([3.0], _U(9), -1.0, loc.F)
    with pytest.raises(StaleLocation):
        hull.update_ch([1.0], _U(9), -1.0, -1)


def test_update_rejects_dead_facet(triangle):
    loc = triangle.generate_sw([0.2, 0.2], 0)
    triangle.remove_facet(loc.F - 1)
    with pytest.raises(StaleLocation):
        triangle.update_ch([0.2, 0.2], _U(3), -1.0, loc.F)


def test_absorbed_vertex_redirect():
    hull = init_hull([[0.0], [2.0]], [_U(0), _U(1)], [1.0, 1.0])
    hull.insert([1.0], _U(2), 0.0)
    hull.insert([3.0], _U(3), 2.5)
    hull.insert([2.5], _U(4), -1.0)
    assert hull.G["xJ"][1] == []
    assert hull.follow(1) >= 0 and hull.G["xJ"][hull.follow(1)]
    res = hull.generate_sw([1.5], 1)
    assert res.inside and hull.audit() == []


# --- invariants -----------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(5, 40), st.integers(0, 10 ** 6))
def test_incremental_matches_brute_force(n, count, seed):
    hull = _random_hull(n, count, seed)
    assert hull.audit() == []
    low, out = live_facet_sets(hull)
    assert low == brute_force_lower_hull(hull.D_xJ)
    assert out == brute_force_outer_hull(hull.D_x)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 3), st.integers(0, 10 ** 6))
def test_brute_force_agrees_with_qhull(n, seed):
    rng = np.random.default_rng(seed)
    Z = np.hstack([rng.uniform(-1, 1, (30, n)), rng.uniform(size=(30, 1))])
    assert brute_force_lower_hull(Z) == qhull_lower_hull(Z)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(0, 10 ** 6))
def test_value_monotone_under_insertion(n, seed):
    rng = np.random.default_rng(seed)
    hull = _random_hull(n, n + 1, seed)
    probes = rng.uniform(-0.3, 0.3, size=(15, n))
    before = [hull.locate_exhaustive(p) for p in probes]
    for j in range(30):
        x = rng.uniform(-1, 1, size=n)
        hull.insert(x, _U(j), float(rng.uniform()), 0)
        after = [hull.locate_exhaustive(p) for p in probes]
        for b, a in zip(before, after):
            if b.inside:
                assert a.inside and a.value <= b.value + 1e-9
        before = after


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(0, 10 ** 6))
def test_interpolant_convex_and_below_data(n, seed):
    hull = _random_hull(n, 30, seed)
    rng = np.random.default_rng(seed + 7)
    for _ in range(20):
        i, j = rng.integers(hull.count, size=2)
        t = float(rng.uniform())
        xa, xb = hull.D_x[i], hull.D_x[j]
        va = hull.locate_exhaustive(xa).value
        vb = hull.locate_exhaustive(xb).value
        vm = hull.locate_exhaustive(t * xa + (1 - t) * xb).value
        assert vm <= t * va + (1 - t) * vb + 1e-9
        assert va <= hull.D_J[i] + 1e-9


def test_interpolated_input_is_convex_combination():
    hull = _random_hull(2, 20, 3)
    res = hull.generate_sw([0.1, -0.2], 0)
    assert res.inside
    expected = sum(w * hull.D_U[p] for w, p in zip(res.weights, res.vertices))
    np.testing.assert_allclose(res.U, expected)
    np.testing.assert_allclose(res.weights @ hull.D_x[list(res.vertices)], [0.1, -0.2],
                               atol=1e-12)


# --- snapshot, dump, audit ------------------------------------------------------

def test_snapshot_isolated():
    hull = _random_hull(2, 15, 4)
    snap = hull.snapshot()
    hull.insert([0.0, 0.0], _U(99), -5.0, 0)
    assert snap.count == 14 or snap.count < hull.count
    assert snap.audit() == []


def test_dump_roundtrip():
    hull = _random_hull(3, 30, 5)
    text = hull.dumps()
    other = ConvexHullObject.load(io.StringIO(text))
    assert other.dumps() == text
    assert other.audit() == []
    x = np.array([0.1, 0.0, -0.1])
    assert other.generate_sw(x, 0).value == pytest.approx(hull.generate_sw(x, 0).value)


def test_audit_detects_corruption():
    hull = _random_hull(2, 15, 6)
    F = hull.live_facets("xJ")[0]
    f = hull.facets["xJ"][F]
    hull.facets["xJ"][F] = (f[0], f[1], (f[2] + 1) % hull.count)
    assert any("G" in p or "missing" in p for p in hull.audit())


def test_audit_detects_point_below():
    hull = _random_hull(2, 15, 6)
    hull._Jv[3] = -100.0
    assert any("below" in p for p in hull.audit())


def test_load_rejects_garbage():
    with pytest.raises(ValueError):
        ConvexHullObject.load(io.StringIO("hello\n"))


def test_learner_query_updates_guess():
    learner = HullLearner(2)
    rng = np.random.default_rng(8)
    for j in range(10):
        learner.add(rng.uniform(-1, 1, 2), _U(j), float(rng.uniform()))
    assert learner.ready
    res = learner.query([0.0, 0.0])
    assert learner.guess == res.i

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from agmonlab.catalog import sample_scalar, sample_vector
from agmonlab.eikonal import (GeodesicError, agmon_phi0, agmon_phi1, combine_max, gradient_magnitude,
                              point_source, solve_eikonal, sublevel_set, trace_geodesic, well_to_well)
from agmonlab.grid import ScalarField, build_grid

G = build_grid((-1, -1), (1, 1), (13, 13))
speeds = arrays(float, G.shape, elements=st.floats(0.05, 3.0))
points = st.tuples(st.integers(0, 12), st.integers(0, 12))


def _dist(c, node):
    return solve_eikonal(c, point_source(G, G.node_position(node)))


@given(c=speeds, node=points)
def test_causality_and_source(c, node):
    w = _dist(c, node)
    assert w.values[node] == 0 and np.all(np.isfinite(w.values)) and np.all(w.values >= 0)
    frozen = w.values.ravel()[w.order]
    assert np.all(np.diff(frozen) >= -1e-12 * max(1.0, frozen.max()))


@given(c=speeds, scale=arrays(float, G.shape, elements=st.floats(1.0, 2.0)), node=points)
def test_comparison_in_speed(c, scale, node):
    assert np.all(_dist(c, node).values <= _dist(c * scale, node).values + 1e-12)


@given(c=speeds, a=points, b=points)
def test_symmetry_and_triangle(c, a, b):
    da = _dist(c, a)
    db = _dist(c, b)
    slack = 2 * c.max() * max(G.spacing)
    # first-order scheme: the lattice distance is a metric up to O(dx)
    assert abs(da.values[b] - db.values[a]) <= slack
    for k in [(0, 0), (6, 6), (12, 3)]:
        assert da.values[k] <= da.values[b] + db.values[k] + slack


@given(lev=st.floats(0.1, 0.9))
def test_larger_source_set_gives_smaller_distance(lev):
    V = sample_scalar("harmonic", {}, G)
    c = np.ones(G.shape)
    small = solve_eikonal(c, sublevel_set(V, lev / 2))
    big = solve_eikonal(c, sublevel_set(V, lev))
    assert np.all(big.values <= small.values + 1e-12)


def test_one_dimensional_exact():
    g = build_grid((0,), (2,), (41,))
    w = solve_eikonal(np.full(g.shape, 3.0), point_source(g, (0.5,)))
    np.testing.assert_allclose(w.values, 3 * np.abs(g.axes[0] - 0.5), atol=1e-12)
    # averaged speeds integrate linear speeds exactly
    x = g.axes[0]
    w = solve_eikonal(x, point_source(g, (0.0,)))
    np.testing.assert_allclose(w.values, x**2 / 2, atol=1e-12)


def test_constant_speed_exact_along_axes():
    g = build_grid((-1, -1), (1, 1), (41, 41))
    w = solve_eikonal(np.ones(g.shape), point_source(g, (0, 0)))
    x, y = g.coords()
    on_axis = (x == 0) | (y == 0)
    np.testing.assert_allclose(w.values[on_axis], np.hypot(x, y)[on_axis], atol=1e-12)
    assert np.all(w.values >= np.hypot(x, y) - 1e-12)


def test_harmonic_phi0():
    g = build_grid((-2, -2), (2, 2), (65, 65))
    V = sample_scalar("harmonic", {}, g)
    w = agmon_phi0(V, 0.0)
    x, y = g.coords()
    exact = (x**2 + y**2) / 2
    assert np.max(np.abs(w.values - exact)) <= 0.03 * exact.max()
    assert w.source.count == 1


@pytest.mark.parametrize("mu, factor", [(2.0, 0.5), (4.0, 1.0)])
def test_magnetic_weight_symmetric_gauge(mu, factor):
    g = build_grid((-2, -2), (2, 2), (65, 65))
    A = sample_vector("symmetric-gauge", {}, g)
    w = agmon_phi1(A, mu, 0.0)
    x, y = g.coords()
    exact = factor * (x**2 + y**2)
    assert np.max(np.abs(w.values - exact)) <= 0.03 * exact.max()


def test_phi1_rejects_negative_gap():
    g = build_grid((-1, -1), (1, 1), (9, 9))
    with pytest.raises(ValueError):
        agmon_phi1(sample_vector("symmetric-gauge", {}, g), 1.0, -0.1)


def test_combined_weight_is_max():
    g = build_grid((-2, -2), (2, 2), (33, 33))
    p0 = agmon_phi0(sample_scalar("harmonic", {}, g), 0.0)
    p1 = agmon_phi1(sample_vector("symmetric-gauge", {}, g), 4.0, 0.0)
    pa = combine_max(p0, p1)
    np.testing.assert_array_equal(pa.values, np.maximum(p0.values, p1.values))
    assert pa.composite
    with pytest.raises(ValueError):
        combine_max(p0, agmon_phi0(sample_scalar("harmonic", {}, build_grid((-2, -2), (2, 2), (17, 17))), 0.0))


def test_quartic_well_to_well():
    g = build_grid((-2,), (2,), (801,))
    V = sample_scalar("quartic-double-well", {}, g)
    assert well_to_well(V, 0.0, (-1.0,), (1.0,)) == pytest.approx(4 / 3, rel=1e-3)


def test_gradient_solves_eikonal_away_from_source():
    g = build_grid((-2, -2), (2, 2), (65, 65))
    V = sample_scalar("harmonic", {}, g)
    w = agmon_phi0(V, 0.0)
    x, y = g.coords()
    r = np.hypot(x, y)
    band = (r > 0.5) & (r < 1.8)
    np.testing.assert_allclose(gradient_magnitude(w.values, g)[band], r[band], rtol=0.1)


def test_geodesic_reaches_source_with_matching_action():
    g = build_grid((-2, -2), (2, 2), (81, 81))
    V = sample_scalar("harmonic", {}, g)
    w = agmon_phi0(V, 0.0)
    pts, action = trace_geodesic(w, (1.5, 0.5))
    assert np.linalg.norm(pts[-1]) <= 2 * max(g.spacing)
    assert action == pytest.approx(w.values[g.nearest_node((1.5, 0.5))], rel=0.05)
    with pytest.raises(ValueError):
        trace_geodesic(combine_max(w, w), (1, 1))


def test_geodesic_plateau_error():
    g = build_grid((-1, -1), (1, 1), (21, 21))
    w = solve_eikonal(np.zeros(g.shape), point_source(g, (0, 0)))
    with pytest.raises(GeodesicError):
        trace_geodesic(w, (0.5, 0.5))


def test_negative_speed_is_clamped_and_counted():
    g = build_grid((0,), (1,), (11,))
    c = np.linspace(-1, 1, 11)
    w = solve_eikonal(ScalarField(g, c), point_source(g, (1.0,)))
    assert w.clamped == 5 and np.all(np.isfinite(w.values))


def test_csv_export(tmp_path):
    g = build_grid((-1,), (1,), (5,))
    w = agmon_phi0(sample_scalar("harmonic", {}, g), 0.0)
    w.to_csv(tmp_path / "phi.csv")
    lines = (tmp_path / "phi.csv").read_text().splitlines()
    assert lines[0] == "x,Phi" and len(lines) == 6
    assert float(lines[1].split(",")[1]) == w.values[0]

"""Velocity grid, sphere quadrature, and elastic collision geometry."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bfd.velocity import (build_grid, build_sphere_quadrature,
                          DistributionField, weighted_inner, weighted_norm,
                          weighted_nu_norm, collision_transform, interpolate)


def test_grid_rejects_bad_parameters():
    with pytest.raises(ValueError):
        build_grid(-1.0, 9)
    with pytest.raises(ValueError):
        build_grid(8.0, 8)       # even n breaks v -> -v symmetry
    with pytest.raises(ValueError):
        build_grid(8.0, 1)


def test_grid_structure(grid9):
    g = grid9
    assert g.n_nodes == 9 ** 3
    assert g.h == pytest.approx(2.0)
    # trapezoid weights integrate 1 over the cube exactly
    assert np.sum(g.quad_weights) == pytest.approx((2 * g.R) ** 3)
    # origin is a node and the node set is symmetric under v -> -v
    i0 = np.argmin(g.r2)
    assert g.r2[i0] == 0.0
    flip = np.array(sorted(map(tuple, -g.nodes)))
    assert np.array_equal(flip, np.array(sorted(map(tuple, g.nodes))))


def test_sphere_quadrature_moments():
    """The rules integrate even polynomials in omega to their exact values."""
    exact = {(): 4 * np.pi, (2,): 4 * np.pi / 3, (2, 2): 4 * np.pi / 15}
    for order in (3, 7, 11):
        sph = build_sphere_quadrature(order)
        w, d = sph.weights, sph.directions
        assert np.sum(w) == pytest.approx(exact[()], rel=1e-13)
        for ax in range(3):
            assert np.dot(w, d[:, ax] ** 2) == \
                pytest.approx(exact[(2,)], rel=1e-12)
        assert np.dot(w, d[:, 0] ** 2 * d[:, 1] ** 2) == \
            pytest.approx(exact[(2, 2)], rel=1e-10 if order > 3 else 0.2)
        # the split cos-theta panels integrate |omega_3| exactly
        assert np.dot(w, np.abs(d[:, 2])) == pytest.approx(2 * np.pi,
                                                           rel=1e-12)


def test_sphere_antipodes():
    sph = build_sphere_quadrature(7)
    d = sph.directions
    assert np.allclose(d[sph.antipode], -d, atol=1e-14)
    assert np.allclose(np.einsum("ij,ij->i", d, d), 1.0, atol=1e-14)


def test_sphere_unknown_order():
    with pytest.raises(ValueError):
        build_sphere_quadrature(5)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6),
       st.floats(0, np.pi), st.floats(0, 2 * np.pi))
def test_collision_transform_conserves(vv, th, ph):
    v, v1 = np.array(vv[:3]), np.array(vv[3:])
    om = np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph),
                   np.cos(th)])
    vp, v1p = collision_transform(v, v1, om)
    assert np.allclose(vp + v1p, v + v1, atol=1e-12)
    assert np.dot(vp, vp) + np.dot(v1p, v1p) == \
        pytest.approx(np.dot(v, v) + np.dot(v1, v1), abs=1e-10)


def test_collision_transform_rejects_nonunit():
    with pytest.raises(ValueError):
        collision_transform(np.zeros(3), np.ones(3), np.array([1.0, 1.0, 0.0]))


def test_interpolation_reproduces_trilinear(grid9, rng):
    g = grid9
    coef = rng.normal(size=8)

    def f(v):
        x, y, z = v[:, 0], v[:, 1], v[:, 2]
        return (coef[0] + coef[1] * x + coef[2] * y + coef[3] * z
                + coef[4] * x * y + coef[5] * x * z + coef[6] * y * z
                + coef[7] * x * y * z)

    fld = DistributionField(g, g.sample(f))
    pts = rng.uniform(-g.R, g.R, size=(20, 3))
    for p in pts:
        assert interpolate(fld, p) == pytest.approx(
            float(f(p[None, :])[0]), rel=1e-12, abs=1e-12)
    assert interpolate(fld, np.array([g.R + 0.1, 0, 0])) == 0.0


def test_weighted_inner_product(grid9, rng):
    g = grid9
    a = DistributionField(g, rng.normal(size=g.n_nodes))
    b = DistributionField(g, rng.normal(size=g.n_nodes))
    assert weighted_inner(a, b) == pytest.approx(weighted_inner(b, a))
    assert weighted_norm(a) > 0
    nu = DistributionField(g, 1.0 + g.r)
    assert weighted_nu_norm(a, nu) >= weighted_norm(a) ** 2 * (1.0 - 1e-12)
    other = build_grid(8.0, 11)
    c = DistributionField(other, np.zeros(other.n_nodes))
    with pytest.raises(ValueError):
        weighted_inner(a, c)

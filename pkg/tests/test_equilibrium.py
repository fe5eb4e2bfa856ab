"""Equilibrium profiles and moment constants against 1-D radial oracles."""

import numpy as np
import pytest

from bfd.velocity import build_grid
from bfd.equilibrium import (mu, mu_radial, fd_weight, fd_weight_radial,
                             fermi_dirac, maxwellian, moment_constants,
                             radial_moment_oracle, radial_moment_oracle_mu)


def test_mu_pointwise():
    assert mu(np.zeros((1, 3))) == pytest.approx(1.0 / (1.0 + np.exp(-1.0)))
    v = np.array([[np.sqrt(2.0), 0.0, 0.0]])
    assert mu(v) == pytest.approx(0.5)          # |v|^2/2 - 1 = 0
    assert 0.0 < mu(np.array([[6.0, 0, 0]])) < 1e-7


def test_fd_weight_bounds(rng):
    v = rng.normal(scale=3.0, size=(500, 3))
    w = fd_weight(v)
    assert np.all(w > 0.0) and np.all(w <= 0.25 + 1e-15)
    # maximum 1/4 is attained exactly on the Fermi sphere |v|^2 = 2
    assert fd_weight_radial(np.array([2.0]))[0] == pytest.approx(0.25)
    assert np.allclose(w, mu(v) * (1.0 - mu(v)), atol=1e-15)


def test_fermi_dirac_reduces_to_mu(rng):
    v = rng.normal(scale=2.0, size=(200, 3))
    assert np.allclose(fermi_dirac(1.0, np.zeros(3), 1.0, v), mu(v),
                       atol=1e-15)
    with pytest.raises(ValueError):
        fermi_dirac(1.0, np.zeros(3), -1.0, v)


def test_maxwellian_dominates_fd_weight(rng):
    # W = mu(1-mu) <= e ^. e^{-|v|^2/2} gives the usual Gaussian tail bound
    v = rng.normal(scale=3.0, size=(300, 3))
    assert np.all(fd_weight(v) <= np.e * maxwellian(v) + 1e-15)


def test_moment_constants_match_radial_oracles():
    # fine grid so trapezoid quadrature error is far below the oracle bar
    g = build_grid(10.0, 81)
    c = moment_constants(g)
    assert c.p01 == pytest.approx(radial_moment_oracle(0), rel=1e-10)
    assert c.p21 == pytest.approx(radial_moment_oracle(2), rel=1e-10)
    assert c.p41 == pytest.approx(radial_moment_oracle(4), rel=1e-10)
    assert c.p00 == pytest.approx(radial_moment_oracle_mu(0), rel=1e-10)
    assert c.p20 == pytest.approx(radial_moment_oracle_mu(2), rel=1e-10)
    # isotropy ties the direction-resolved moments to the radial ones
    assert 3.0 * c.E2 == pytest.approx(c.p21, rel=1e-10)
    assert 3.0 * c.E4 + 6.0 * c.E22 == pytest.approx(c.p41, rel=1e-8)


def test_constant_identities(constants9):
    c = constants9
    c.validate()
    assert c.KA == pytest.approx((c.E4 + 2 * c.E22) / (2 * c.E2))
    assert c.Kg == pytest.approx(c.KA - 1.0)
    # CA = <(|v|^2/2 - KA)^2> collapses to KA (KA E0 - 3 E2 / 2)
    assert c.CA == pytest.approx(c.KA * (c.KA * c.E0 - 1.5 * c.E2),
                                 rel=1e-12)
    assert c.CA > 0.0

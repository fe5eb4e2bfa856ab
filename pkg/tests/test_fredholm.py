"""Fredholm correctors, transport coefficients, and the coercivity gap."""

import numpy as np
import pytest

from bfd.velocity import DistributionField, weighted_inner
from bfd.fredholm import (FredholmError, build_A, build_B, solve_fredholm,
                          corrector_fields, transport_coefficients,
                          coercivity_lambda, null_space_eigenvalues)
from bfd.collision import invariant_basis


@pytest.fixture(scope="module")
def correctors(L9, grid9, constants9):
    return corrector_fields(L9, grid9, constants9, tol=1e-12)


@pytest.fixture(scope="module")
def transport9(L9, grid9, constants9):
    return transport_coefficients(L9, grid9, constants9, tol=1e-12)


def test_solvability_guard(L9, grid9):
    # an invariant right-hand side must be rejected, not silently solved
    bad = DistributionField(grid9, np.ones(grid9.n_nodes))
    with pytest.raises(FredholmError):
        solve_fredholm(L9, bad)


def test_round_trip_residual(L9, grid9, correctors):
    A, Ap, B_off, Bp_off = correctors
    for rhs, sol in list(zip(A, Ap)) + list(zip(B_off, Bp_off)):
        res = L9.apply(sol).values + rhs.values       # L(-x) + rhs
        num = np.sqrt(np.dot(res ** 2, grid9.meas))
        den = np.sqrt(np.dot(rhs.values ** 2, grid9.meas))
        assert num < 1e-8 * den


def test_correctors_orthogonal_to_null(grid9, correctors):
    A, Ap, B_off, Bp_off = correctors
    E = invariant_basis(grid9)
    for fld in list(A) + list(Ap) + list(B_off) + list(Bp_off):
        nrm = np.sqrt(np.dot(fld.values ** 2, grid9.meas))
        for j in range(5):
            ip = float(np.dot(fld.values * E[:, j], grid9.meas))
            assert abs(ip) < 1e-8 * nrm


def test_transport_positive_and_routes_agree(transport9):
    tc, table, _ = transport9
    tc.validate()
    assert tc.nu_star > 0 and tc.kappa_star > 0
    assert tc.nu_star_shell == pytest.approx(tc.nu_star, rel=1e-6)
    assert tc.kappa_star_shell == pytest.approx(tc.kappa_star, rel=1e-6)


def test_kappa_prefactor_identity(transport9, constants9):
    tc, _, _ = transport9
    c = constants9
    ratio = ((2.0 * c.E0 / (3.0 * c.E2)) * c.Kg - 1.0) \
        / (2.0 * c.E0 / (3.0 * c.E2))
    assert tc.kappa1 / tc.kappa2 == pytest.approx(ratio, rel=1e-8)


def test_radial_kernels_positive(transport9):
    _, table, _ = transport9
    assert np.all(table.alpha[np.isfinite(table.alpha)] >= 0.0)
    assert np.all(table.beta[np.isfinite(table.beta)] > 0.0)


def test_coercivity_constant(L9, grid9, transport9, rng):
    tc, _, _ = transport9
    lam = tc.lambda_coercive
    assert lam > 0
    # lambda really is a lower bound: <Lg, g> >= lambda |{I-P}g|_nu^2
    from bfd.velocity import weighted_nu_norm
    from bfd.macro import MacroProjector
    nu = DistributionField(grid9, L9.nu_vals.copy())
    P = MacroProjector(grid9)
    for _ in range(5):
        g = DistributionField(grid9, rng.normal(size=grid9.n_nodes))
        micro = DistributionField(grid9, P.micro(g.values))
        lhs = weighted_inner(L9.apply(g), g)
        rhs = lam * weighted_nu_norm(micro, nu)
        assert lhs >= rhs * (1.0 - 1e-9)


def test_exactly_five_null_eigenvalues(L9):
    vals = null_space_eigenvalues(L9, k=8)
    assert np.all(np.abs(vals[:5]) <= 1e-6 * vals[5])
    assert vals[5] > 0

"""Macro-micro decomposition and hydrodynamic moment extraction.

P is the orthogonal projection in L^2(mu(1-mu) dv) onto the collision
invariant span {1, v, |v|^2}; g = Pg + (I-P)g splits a perturbation into
its hydrodynamic part a + b.v + c|v|^2 and the microscopic remainder.
On top of that: the orthonormalized 13-moment family, the temporal
energy functional E_N and the micro/macro dissipation rates (spectral
spatial derivatives on the periodic torus), and the fluid variables
(rho, u, theta) extracted from moment formulas.

Spatially resolved perturbations are arrays of shape
(Nx,)*d + (n_nodes,) on the torus [0, 2pi)^d; velocity-only fields are
DistributionField.
"""

import itertools

import numpy as np
from dataclasses import dataclass
from scipy.linalg import cho_factor, cho_solve

from .velocity import DistributionField
from .collision import invariant_fields


@dataclass
class HydroCoeffs:
    """Coefficients of Pg = a + b.v + c|v|^2 at one spatial point."""
    a: float
    b: np.ndarray
    c: float

    def reconstruct(self, grid):
        return DistributionField(
            grid, self.a + grid.nodes @ np.asarray(self.b, dtype=float)
            + self.c * grid.r2)


class MacroProjector:
    """Weighted-L^2 projector onto span{1, v1, v2, v3, |v|^2}."""

    def __init__(self, grid):
        self.grid = grid
        self.E = invariant_fields(grid)          # (n_nodes, 5)
        self.DE = self.E * grid.meas[:, None]
        G = self.E.T @ self.DE
        # the Gram matrix is SPD for any valid grid; a failure here means
        # the grid degenerated (guarded per contract)
        try:
            self._ginv = cho_solve(cho_factor(G), np.eye(G.shape[0]))
        except np.linalg.LinAlgError as e:
            raise ValueError("singular invariant Gram matrix: %s" % e)
        self.gram = G

    def coefficients(self, gvals):
        """(..., n_nodes) -> (..., 5) coefficients in the raw basis."""
        return (np.asarray(gvals) @ self.DE) @ self._ginv

    def apply(self, gvals):
        """Pg for one or many spatial points, shape-preserving."""
        return self.coefficients(gvals) @ self.E.T

    def micro(self, gvals):
        return np.asarray(gvals) - self.apply(gvals)


def project_P(g_field, projector=None):
    """Macro-micro split of a velocity-space field.

    Returns (Pg, HydroCoeffs); g - Pg is weighted-orthogonal to the
    invariant span.
    """
    if projector is None:
        projector = MacroProjector(g_field.grid)
    co = projector.coefficients(g_field.values)
    Pg = DistributionField(g_field.grid, co @ projector.E.T)
    return Pg, HydroCoeffs(float(co[0]), co[1:4].copy(), float(co[4]))


# fixed documented ordering of the 13 raw moments
_MOMENT13_NAMES = ("1", "v1", "v2", "v3", "v1^2", "v2^2", "v3^2",
                   "v1v2", "v1v3", "v2v3", "v1|v|^2", "v2|v|^2", "v3|v|^2")


class MomentBasis13:
    """The thirteen moments {1, v_i, v_i v_j, v_i |v|^2}, orthonormalized.

    Modified Gram-Schmidt in the weighted inner product, in the fixed
    order (1; v1,v2,v3; v1^2,v2^2,v3^2,v1v2,v1v3,v2v3; v1|v|^2,
    v2|v|^2, v3|v|^2) so the transform coefficients xi are reproducible.
    """

    names = _MOMENT13_NAMES

    def __init__(self, grid):
        self.grid = grid
        v = grid.nodes
        r2 = grid.r2
        raw = np.column_stack([
            np.ones(grid.n_nodes), v[:, 0], v[:, 1], v[:, 2],
            v[:, 0] ** 2, v[:, 1] ** 2, v[:, 2] ** 2,
            v[:, 0] * v[:, 1], v[:, 0] * v[:, 2], v[:, 1] * v[:, 2],
            v[:, 0] * r2, v[:, 1] * r2, v[:, 2] * r2])
        self.raw = raw
        self.gram = raw.T @ (raw * grid.meas[:, None])
        # modified Gram-Schmidt; xi maps raw -> orthonormal (upper tri)
        k = raw.shape[1]
        xi = np.eye(k)
        basis = raw.copy()
        for i in range(k):
            for j in range(i):
                c = float(np.dot(basis[:, i] * basis[:, j], grid.meas))
                basis[:, i] -= c * basis[:, j]
                xi[:, i] -= c * xi[:, j]
            nrm = np.sqrt(float(np.dot(basis[:, i] ** 2, grid.meas)))
            if nrm <= 0:
                raise ValueError("13-moment family degenerate on this grid")
            basis[:, i] /= nrm
            xi[:, i] /= nrm
        self.basis = basis
        self.xi = xi
        self.dbasis = basis * grid.meas[:, None]

    def project(self, gvals):
        """Coefficients <g, e~_i> w.r.t. the orthonormal basis."""
        return np.asarray(gvals) @ self.dbasis

    def reconstruct(self, coeffs):
        return np.asarray(coeffs) @ self.basis.T


def moments13_project(g_field, basis):
    return basis.project(g_field.values)


def _check_spatial(g, grid):
    g = np.asarray(g, dtype=float)
    if g.shape[-1] != grid.n_nodes:
        raise ValueError("last axis must run over velocity nodes")
    d = g.ndim - 1
    if d not in (0, 1, 2):
        raise ValueError("supported spatial dimensions: 0, 1, 2")
    return g, d


def _deriv_weights(shape, N, exclude_zero=False):
    """Sum over multi-indices |alpha| <= N of prod_i k_i^(2 alpha_i).

    This is the Fourier multiplier that turns one |g-hat|^2 spectrum
    into sum_alpha ||d_x^alpha g||^2.
    """
    d = len(shape)
    ks = [np.fft.fftfreq(nx, 1.0 / nx) for nx in shape]
    out = np.zeros(shape)
    for alpha in itertools.product(range(N + 1), repeat=d):
        if sum(alpha) > N:
            continue
        if exclude_zero and sum(alpha) == 0:
            continue
        term = np.ones(shape)
        for ax in range(d):
            shp = [1] * d
            shp[ax] = shape[ax]
            term = term * (ks[ax] ** (2 * alpha[ax])).reshape(shp)
        out += term
    return out


def _spectrum(g, d, meas):
    """Velocity-integrated spatial power spectrum of g."""
    if d == 0:
        return float(np.dot(g * g, meas))
    gh = np.fft.fftn(g, axes=tuple(range(d)))
    return (np.abs(gh) ** 2) @ meas


def energy_EN(g, grid, N=2):
    """E_N(g) = sqrt(sum_{|alpha|<=N} ||d_x^alpha g||^2), weighted in v."""
    g, d = _check_spatial(g, grid)
    if d == 0:
        return float(np.sqrt(max(_spectrum(g, 0, grid.meas), 0.0)))
    nx = g.shape[:d]
    if N >= min(nx) // 2:
        import warnings
        warnings.warn("derivative order %d at resolution %s exceeds the "
                      "reliably resolved band" % (N, nx))
    spec = _spectrum(g, d, grid.meas)
    w = _deriv_weights(nx, N)
    scale = (2.0 * np.pi) ** d / float(np.prod(nx)) ** 2
    return float(np.sqrt(max(scale * np.sum(w * spec), 0.0)))


def _dissipation(g, grid, nu, N, projector, macro_part, exclude_zero):
    g, d = _check_spatial(g, grid)
    if projector is None:
        projector = MacroProjector(grid)
    part = projector.apply(g) if macro_part else projector.micro(g)
    wmeas = grid.meas * np.asarray(nu, dtype=float)
    if d == 0:
        if exclude_zero:
            return 0.0
        return float(np.sqrt(max(np.dot(part * part, wmeas), 0.0)))
    spec = _spectrum(part, d, wmeas)
    w = _deriv_weights(g.shape[:d], N, exclude_zero=exclude_zero)
    scale = (2.0 * np.pi) ** d / float(np.prod(g.shape[:d])) ** 2
    return float(np.sqrt(max(scale * np.sum(w * spec), 0.0)))


def dissipation_mic(g, grid, nu, N=2, projector=None):
    """D_mic(g): nu-weighted norm of (I-P)g summed over |alpha| <= N."""
    return _dissipation(g, grid, nu, N, projector, False, False)


def dissipation_mac(g, grid, nu, N=2, projector=None):
    """D_mac(g): nu-weighted norm of Pg summed over 0 < |alpha| <= N."""
    return _dissipation(g, grid, nu, N, projector, True, True)


@dataclass
class HydroFields:
    """Fluid variables on the spatial grid (scalars + 3-velocity)."""
    rho: np.ndarray
    u: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        for name in ("rho", "u", "theta"):
            a = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(a)):
                raise ValueError("non-finite %s field" % name)
            setattr(self, name, a)
        if self.u.shape[-1] != 3:
            raise ValueError("u must have a trailing component axis of 3")
        if self.u.shape[:-1] != self.rho.shape or \
                self.theta.shape != self.rho.shape:
            raise ValueError("inconsistent spatial shapes")


def fluid_variables(g, grid, constants):
    """(rho, u, theta) moment extraction, pointwise in x.

    rho = <g, 1 + ((2E0/3E2)Kg - 1)|v|^2/2> / (KA E0 - 3E2/2)
    u   = <g, v> / E2
    theta = <g, (E0/3E2)|v|^2 - 1> / (KA E0 - 3E2/2)
    """
    g, _ = _check_spatial(g, grid)
    c = constants
    den = c.KA * c.E0 - 1.5 * c.E2
    w_rho = (1.0 + ((2.0 * c.E0 / (3.0 * c.E2)) * c.Kg - 1.0)
             * 0.5 * grid.r2) / den
    w_th = ((c.E0 / (3.0 * c.E2)) * grid.r2 - 1.0) / den
    meas = grid.meas
    rho = g @ (w_rho * meas)
    u = np.stack([g @ (grid.nodes[:, k] * meas) for k in range(3)],
                 axis=-1) / c.E2
    theta = g @ (w_th * meas)
    return HydroFields(rho, u, theta)


def limit_moments(g, grid, constants, leray=None):
    """The two moment fields compared against the limiting flow.

    u_moment = Leray projection of <g, v>/E2 (identity if no projector
    is supplied), theta_moment = <g, (|v|^2/2 - KA)>/CA.
    """
    g, d = _check_spatial(g, grid)
    c = constants
    u = np.stack([g @ (grid.nodes[:, k] * grid.meas) for k in range(3)],
                 axis=-1) / c.E2
    if leray is not None:
        u = leray(u)
    theta = g @ ((0.5 * grid.r2 - c.KA) * grid.meas) / c.CA
    return u, theta

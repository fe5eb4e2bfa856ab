"""Velocity-domain discretization.

Cartesian velocity grid on [-R, R]^3 with trapezoid quadrature weights,
product Gauss-Legendre x uniform-azimuth sphere rules for the collision
angle integral, weighted inner products in L^2(mu(1-mu) dv), and the
elastic pre/post-collision velocity transform.
"""

import numpy as np
from numpy.polynomial.legendre import leggauss

from .equilibrium import fd_weight_radial


class VelocityGrid:
    """Uniform tensor-product velocity grid on [-R, R]^3.

    Nodes are ordered lexicographically (x fastest-varying last), i.e.
    flat index = (ix*n + iy)*n + iz.  n must be odd so that v -> -v maps
    the node set onto itself and the origin is a node.
    """

    def __init__(self, R, n):
        if R <= 0:
            raise ValueError("grid half-width R must be positive")
        n = int(n)
        if n < 3:
            raise ValueError("need at least 3 points per axis")
        if n % 2 == 0:
            raise ValueError("points_per_axis must be odd (v -> -v symmetry)")
        self.R = float(R)
        self.n = n
        self.h = 2.0 * self.R / (n - 1)
        self.axis = np.linspace(-self.R, self.R, n)
        X, Y, Z = np.meshgrid(self.axis, self.axis, self.axis, indexing="ij")
        self.nodes = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
        self.n_nodes = n ** 3
        # trapezoid axis weights (interior h, endpoints h/2)
        aw = np.full(n, self.h)
        aw[0] *= 0.5
        aw[-1] *= 0.5
        self.axis_weights = aw
        self.cell_weight = self.h ** 3
        # per-node quadrature weight (product of axis weights)
        self.quad_weights = (aw[:, None, None] * aw[None, :, None]
                             * aw[None, None, :]).ravel()
        r2 = np.einsum("ij,ij->i", self.nodes, self.nodes)
        self.r2 = r2
        self.r = np.sqrt(r2)
        self.fd_w = fd_weight_radial(r2)
        # combined measure weight for <f,g> = sum f g mu(1-mu) qw
        self.meas = self.fd_w * self.quad_weights

    def sample(self, func):
        """Sample a callable of the node array (or of (x,y,z)) on the grid."""
        return np.asarray(func(self.nodes), dtype=float)

    def key(self):
        return (self.R, self.n)

    def __repr__(self):
        return "VelocityGrid(R=%g, n=%d)" % (self.R, self.n)


def build_grid(R, n):
    """Build a velocity grid; rejects even n and nonpositive R."""
    return VelocityGrid(R, n)


class DistributionField:
    """Nodal samples of a velocity-space function on one grid."""

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=float).ravel()
        if values.size != grid.n_nodes:
            raise ValueError("value count does not match grid")
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite nodal value")
        self.grid = grid
        self.values = values

    def __repr__(self):
        return "DistributionField(%r, n=%d)" % (self.grid, self.values.size)


# tabulated sphere rules: exactness degree -> (GL points per cos-theta
# panel, azimuth count).  The integrand weight |cos theta| is only
# piecewise smooth, so cos theta in [-1,0] and [0,1] get separate panels.
_SPHERE_RULES = {3: (2, 8), 7: (4, 16), 11: (6, 24), 15: (8, 32),
                 23: (12, 48)}


class SphereQuadrature:
    """Unit-sphere nodes/weights, antipodally symmetric."""

    def __init__(self, order):
        order = int(order)
        if order not in _SPHERE_RULES:
            raise ValueError("unknown sphere rule order %r (have %s)"
                             % (order, sorted(_SPHERE_RULES)))
        self.order = order
        m, na = _SPHERE_RULES[order]
        xg, wg = leggauss(m)
        # map GL rule from [-1,1] to the two panels of cos(theta)
        c_lo = 0.5 * (xg - 1.0)      # panel [-1, 0]
        c_hi = 0.5 * (xg + 1.0)      # panel [0, 1]
        cos_t = np.concatenate([c_lo, c_hi])
        w_c = np.concatenate([0.5 * wg, 0.5 * wg])
        phi = 2.0 * np.pi * np.arange(na) / na
        w_phi = 2.0 * np.pi / na
        C, P = np.meshgrid(cos_t, phi, indexing="ij")
        WC = np.repeat(w_c, na) * w_phi
        s = np.sqrt(np.clip(1.0 - C.ravel() ** 2, 0.0, None))
        self.directions = np.column_stack(
            [s * np.cos(P.ravel()), s * np.sin(P.ravel()), C.ravel()])
        self.weights = WC
        self.n_dirs = self.directions.shape[0]
        # index of the antipode of each node (exists by construction)
        d = self.directions
        self.antipode = np.array(
            [int(np.argmin(np.einsum("ij,ij->i", d + d[k], d + d[k])))
             for k in range(self.n_dirs)])

    def key(self):
        return self.order

    def __repr__(self):
        return "SphereQuadrature(order=%d, nodes=%d)" % (self.order, self.n_dirs)


def build_sphere_quadrature(order):
    return SphereQuadrature(order)


def weighted_inner(f, g):
    """<f, g> = int f g mu(1-mu) dv by grid quadrature."""
    if f.grid is not g.grid and f.grid.key() != g.grid.key():
        raise ValueError("fields live on different grids")
    return float(np.dot(f.values * g.values, f.grid.meas))


def weighted_norm(f):
    return np.sqrt(max(weighted_inner(f, f), 0.0))


def weighted_nu_norm(f, nu):
    """|f|_nu^2 = <nu f, f>; nu must be strictly positive."""
    if np.any(nu.values <= 0.0):
        raise ValueError("collision frequency sample must be positive")
    if f.grid is not nu.grid and f.grid.key() != nu.grid.key():
        raise ValueError("fields live on different grids")
    return float(np.dot(nu.values * f.values * f.values, f.grid.meas))


def collision_transform(v, v1, omega):
    """Elastic collision map: returns (v', v1').

    v' = v + [(v1-v).omega] omega,  v1' = v1 - [(v1-v).omega] omega.
    """
    v = np.asarray(v, dtype=float)
    v1 = np.asarray(v1, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if abs(np.dot(omega, omega) - 1.0) > 2e-12:
        raise ValueError("omega must be a unit vector")
    proj = np.dot(v1 - v, omega)
    return v + proj * omega, v1 - proj * omega


def interpolate(f, point):
    """Trilinear interpolation of a DistributionField; 0 outside [-R,R]^3."""
    g = f.grid
    p = np.asarray(point, dtype=float)
    if np.any(p < -g.R) or np.any(p > g.R):
        return 0.0
    t = (p + g.R) / g.h
    i0 = np.minimum(np.floor(t).astype(int), g.n - 2)
    frac = t - i0
    vals = f.values.reshape(g.n, g.n, g.n)
    out = 0.0
    for dx in (0, 1):
        wx = frac[0] if dx else 1.0 - frac[0]
        for dy in (0, 1):
            wy = frac[1] if dy else 1.0 - frac[1]
            for dz in (0, 1):
                wz = frac[2] if dz else 1.0 - frac[2]
                out += wx * wy * wz * vals[i0[0] + dx, i0[1] + dy, i0[2] + dz]
    return float(out)

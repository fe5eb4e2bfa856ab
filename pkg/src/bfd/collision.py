"""Collision operators: full nonlinear C(F), entropy production, and the
perturbative family nu, K1, K2, L, Q (six terms), T (eight terms).

The discrete operators share one pruned pair table and one sphere rule.
Equilibrium factors are evaluated exactly at the exact post-collision
points, so C(mu) vanishes to rounding.  Perturbation-type fields are
interpolated in the half-density scaling sqrt(W) g, W = mu(1-mu): post-
collision values are interp(sqrt(W) g)/sqrt(W(v')).  That is the
discretization of the bounded symmetrized kernel sqrt(W/W') k(v,v') and
keeps every entry of the sqrt(W qw)-scaled operator matrix uniformly
bounded, which is what makes the symmetrized spectrum clean across the
steep Fermi-Dirac weight gradient.  With the matching "perturbative" C
mode the discrete expansion C(mu + eps W g) = eps W(-L g + eps Q +
eps^2 T) holds to rounding.

The assembled dense L lives in the scaled frame psi = sqrt(W qw) g, in
which the weighted inner product is Euclidean, L is symmetric up to
quadrature error, and the nu-weighted norm has a diagonal Gram matrix.
"""

import os
import numpy as np

from . import _kernels as _k
from .velocity import DistributionField
from .equilibrium import mu_radial
from .cache import save_matrix, load_matrix, CacheError, CacheMismatch, \
    CacheCorrupt

_SCHEMES = {"linear": 0, "cubic": 1}

# dense-matrix limits: disk cache keeps the documented n<=21 cap; in-memory
# assembly is allowed to n=25 (1.95 GB) for refinement studies.
DENSE_CACHE_MAX_N = 21
DENSE_MAX_N = 25


class CollisionKernelCache:
    """Pruned (node, partner) pair tables shared by all operators.

    The operator table drops pairs with
    |v1-v| exp(2 - (|v|^2+|v1|^2)/2) < prune_tol; that bound dominates
    the weighted kernel entry symmetrically in the pair, so pruning
    perturbs the weighted operator by O(prune_tol).  The collision
    frequency gets its own table pruned on the row bound
    |v1-v| exp(1 - |v1|^2/2), which keeps nu accurate at every node
    (the symmetric bound would zero out nu far from the origin).
    """

    def __init__(self, grid, sphere, prune_tol=1e-14, scheme="cubic"):
        if scheme not in _SCHEMES:
            raise ValueError("unknown interpolation scheme %r" % scheme)
        self.grid = grid
        self.sphere = sphere
        self.prune_tol = float(prune_tol)
        self.scheme = scheme
        self.scheme_id = _SCHEMES[scheme]
        self.mu_n = mu_radial(grid.r2)
        # 1 - mu computed stably as the opposite logistic branch
        x = 0.5 * grid.r2 - 1.0
        self.om_n = 1.0 / (1.0 + np.exp(-np.clip(x, -700, 700)))
        self.W_n = self.mu_n * self.om_n
        self.sqW_n = np.sqrt(self.W_n)
        self.sqmeas = np.sqrt(grid.meas)
        self.isqw = 1.0 / np.sqrt(grid.quad_weights)
        self.row_ptr = _k.count_pairs(grid.nodes, grid.r2,
                                      self.prune_tol, True)
        self.cols = _k.fill_pairs(grid.nodes, grid.r2, self.prune_tol,
                                  True, self.row_ptr)
        self.n_pairs = int(self.row_ptr[-1])
        self._nu_row = None      # (row_ptr, cols) of the nu table
        self._nu = None
        self._nu_consistent = None

    def _args(self):
        g = self.grid
        s = self.sphere
        return (g.nodes, g.r2, self.mu_n, self.om_n, self.W_n,
                g.quad_weights, self.row_ptr, self.cols,
                s.directions, s.weights)

    def nu_values(self):
        """Collision frequency from the row-bound pair table (accurate
        at all nodes, including where the operator table is empty)."""
        if self._nu is None:
            g = self.grid
            if self._nu_row is None:
                rp = _k.count_pairs(g.nodes, g.r2, self.prune_tol, False)
                cc = _k.fill_pairs(g.nodes, g.r2, self.prune_tol, False, rp)
                self._nu_row = (rp, cc)
            rp, cc = self._nu_row
            out = np.empty(g.n_nodes)
            _k.nu_vector(g.nodes, g.r2, self.mu_n, self.om_n, self.W_n,
                         g.quad_weights, rp, cc,
                         self.sphere.directions, self.sphere.weights, out)
            self._nu = out
        return self._nu

    def nu_values_consistent(self):
        """Collision frequency summed over the operator pair table.

        This is the diagonal the assembly kernel accumulates before the
        accurate-nu correction; it underestimates nu at nodes whose
        operator rows were fully pruned.
        """
        if self._nu_consistent is None:
            out = np.empty(self.grid.n_nodes)
            _k.nu_vector(*self._args(), out)
            self._nu_consistent = out
        return self._nu_consistent


def invariant_fields(grid):
    """The five collision invariants 1, v1, v2, v3, |v|^2 as nodal arrays."""
    return np.column_stack([np.ones(grid.n_nodes), grid.nodes[:, 0],
                            grid.nodes[:, 1], grid.nodes[:, 2], grid.r2])


def invariant_basis(grid):
    """Weighted-orthonormal basis of the invariant span (columns).

    Modified Gram-Schmidt in the weighted inner product, run twice for
    orthogonality at rounding level.  Working directly on the polynomial
    fields keeps the basis nodally bounded everywhere (a scaled-QR route
    would divide rounding noise by the tiny far-tail measure).
    """
    basis = invariant_fields(grid).copy()
    meas = grid.meas
    for _ in range(2):
        for i in range(basis.shape[1]):
            for j in range(i):
                c = float(np.dot(basis[:, i] * basis[:, j], meas))
                basis[:, i] -= c * basis[:, j]
            nrm = np.sqrt(float(np.dot(basis[:, i] ** 2, meas)))
            basis[:, i] /= nrm
    return basis


def conservative_correction(grid, values, c_space=False):
    """Project out the collision-invariant content of an operator output.

    For g-space outputs (Q, T) this is the weighted orthogonal projection.
    For C-space outputs (plain-dv functions) the subtraction is W-weighted
    so the plain moments int C e dv vanish; both use the same Gram matrix.
    """
    E = invariant_fields(grid)
    G = E.T @ (E * grid.meas[:, None])
    if c_space:
        m = E.T @ (values * grid.quad_weights)
        a = np.linalg.solve(G, m)
        return values - grid.fd_w * (E @ a)
    m = E.T @ (values * grid.meas)
    a = np.linalg.solve(G, m)
    return values - E @ a


def full_collision(F, kernel, mode="compensated", corrected=False):
    """The collision integral C(F) by direct quadrature.

    mode "compensated": F' = mu(v') + interp(F - mu); exact for F = mu
    and robust for arbitrary admissible F.
    mode "perturbative": F' = mu(v') + sqrt(W(v')) interp((F - mu)/sqrt(W));
    this is the convention under which the discrete expansion
    C(mu + eps W g) = eps W(-L g + eps Q + eps^2 T) holds to rounding.
    It requires (F - mu)/sqrt(W) finite, i.e. equilibrium-like tails.
    mode "logit": F' = sigma(interp(ln(F/(1-F)))) with tricubic stencils;
    exact for every Fermi-Dirac state (logit is quadratic in v).
    """
    g = kernel.grid
    vals = F.values
    if np.any(vals < 0.0) or np.any(vals > 1.0):
        raise ValueError("distribution must satisfy 0 <= F <= 1 nodally")
    out = np.zeros(g.n_nodes)
    if mode in ("compensated", "perturbative"):
        pert = vals - kernel.mu_n
        mult_w = 0
        if mode == "perturbative":
            with np.errstate(divide="ignore", invalid="ignore",
                             over="ignore"):
                pert = pert / kernel.sqW_n
            if not np.all(np.isfinite(pert)):
                raise ValueError("perturbative mode needs (F - mu)/sqrt(W) "
                                 "finite at every node")
            mult_w = 1
        pert = np.ascontiguousarray(pert)
        _k.collision_c(g.nodes, g.r2, kernel.mu_n, kernel.W_n,
                       g.quad_weights, kernel.row_ptr, kernel.cols,
                       kernel.sphere.directions, kernel.sphere.weights,
                       pert, g.R, g.h, g.n, kernel.scheme_id, mult_w, out)
    elif mode == "logit":
        if np.any(vals <= 0.0) or np.any(vals >= 1.0):
            raise ValueError("logit mode needs 0 < F < 1 strictly")
        lam = np.log(vals) - np.log1p(-vals)
        _k.collision_c_logit(g.nodes, g.quad_weights, kernel.row_ptr,
                             kernel.cols, kernel.sphere.directions,
                             kernel.sphere.weights, lam, vals,
                             g.R, g.h, g.n, out)
    else:
        raise ValueError("unknown mode %r" % mode)
    if corrected:
        out = conservative_correction(g, out, c_space=True)
    return DistributionField(g, out)


def collision_moments(grid, C_vals):
    """Plain moments int C(F) (1, v, |v|^2) dv of a collision output."""
    E = invariant_fields(grid)
    return E.T @ (C_vals * grid.quad_weights)


def entropy_production(F, kernel):
    """D(F) = int C(F) ln((1-F)/F) dv, with conservatively corrected C.

    ln((1-F)/F) is the derivative of the entropy density
    -[F ln F + (1-F) ln(1-F)], so D is the entropy production rate and
    is nonnegative (near equilibrium D = eps^2 <Lg, g> + higher order).
    The correction makes D vanish at every Fermi-Dirac state up to
    rounding, since ln((1-F)/F) is then a combination of invariants.
    """
    vals = F.values
    if np.any(vals <= 0.0) or np.any(vals >= 1.0):
        raise ValueError("entropy production needs 0 < F < 1 strictly")
    C = full_collision(F, kernel, mode="compensated", corrected=True)
    lnfac = np.log1p(-vals) - np.log(vals)
    return float(np.dot(C.values * lnfac, F.grid.quad_weights))


def nu_field(kernel):
    """Collision frequency as a DistributionField."""
    return DistributionField(kernel.grid, kernel.nu_values().copy())


def apply_K1(g_field, kernel):
    return _apply_k(g_field, kernel)[0]


def apply_K2(g_field, kernel):
    return _apply_k(g_field, kernel)[1]


def _apply_k(g_field, kernel):
    g = kernel.grid
    if g_field.grid is not g and g_field.grid.key() != g.key():
        raise ValueError("field grid does not match operator grid")
    vals = np.ascontiguousarray(g_field.values)
    xg = np.ascontiguousarray(kernel.sqW_n * vals)
    out1 = np.empty(g.n_nodes)
    out2 = np.empty(g.n_nodes)
    _k.apply_k(*kernel._args(), vals, xg, g.R, g.h, g.n,
               kernel.scheme_id, out1, out2)
    return (DistributionField(g, out1), DistributionField(g, out2))


def apply_L_direct(g_field, kernel):
    """nu g - K2 g + K1 g without the assembled matrix.

    Uses the accurate (row-bound table) nu, matching the assembled raw
    matrix, whose diagonal carries the same nu correction so that rows
    fully pruned from the operator table act as multiplication by nu
    instead of degenerating to zero.
    """
    k1, k2 = _apply_k(g_field, kernel)
    vals = (kernel.nu_values() * g_field.values
            - k2.values + k1.values)
    return DistributionField(kernel.grid, vals)


def apply_Q(f_field, g_field, kernel, corrected=False):
    """Bilinear collision form Q(f,g), all six displayed terms fused."""
    g = kernel.grid
    for fld in (f_field, g_field):
        if fld.grid is not g and fld.grid.key() != g.key():
            raise ValueError("field grid does not match operator grid")
    fv = np.ascontiguousarray(f_field.values)
    gv = np.ascontiguousarray(g_field.values)
    out = np.empty(g.n_nodes)
    _k.apply_q(*kernel._args(), fv,
               np.ascontiguousarray(kernel.sqW_n * fv), gv,
               np.ascontiguousarray(kernel.sqW_n * gv),
               g.R, g.h, g.n, kernel.scheme_id, out)
    if corrected:
        out = conservative_correction(g, out)
    return DistributionField(g, out)


def apply_T(f_field, g_field, h_field, kernel, corrected=False):
    """Trilinear collision form T(f,g,h), all eight displayed terms fused."""
    g = kernel.grid
    for fld in (f_field, g_field, h_field):
        if fld.grid is not g and fld.grid.key() != g.key():
            raise ValueError("field grid does not match operator grid")
    fv = np.ascontiguousarray(f_field.values)
    gv = np.ascontiguousarray(g_field.values)
    hv = np.ascontiguousarray(h_field.values)
    out = np.empty(g.n_nodes)
    _k.apply_t(*kernel._args(), fv,
               np.ascontiguousarray(kernel.sqW_n * fv), gv,
               np.ascontiguousarray(kernel.sqW_n * gv), hv,
               np.ascontiguousarray(kernel.sqW_n * hv),
               g.R, g.h, g.n, kernel.scheme_id, out)
    if corrected:
        out = conservative_correction(g, out)
    return DistributionField(g, out)


def scaled_invariant_basis(grid):
    """Euclidean-orthonormal invariant basis in the psi = sqrt(meas) g frame.

    QR of the sqrt(meas)-scaled invariant fields; the columns are bounded
    and decay with the measure, so no rounding is amplified anywhere.
    """
    Y, _ = np.linalg.qr(np.sqrt(grid.meas)[:, None] * invariant_fields(grid))
    return Y


def _symmetrize(mat, block=1024):
    """In-place Euclidean symmetrization 0.5 (mat + mat^T), blockwise."""
    N = mat.shape[0]
    for s in range(0, N, block):
        e = min(s + block, N)
        for s2 in range(s, N, block):
            e2 = min(s2 + block, N)
            A = mat[s:e, s2:e2]
            B = mat[s2:e2, s:e]
            S = 0.5 * (A + B.T)
            mat[s:e, s2:e2] = S
            mat[s2:e2, s:e] = S.T
    return mat


def _project_null(mat, Y, block=1024):
    """In-place double-sided projection Q mat Q, Q = I - Y Y^T (rank-5)."""
    N = mat.shape[0]
    A1 = np.empty((Y.shape[1], N))
    for s in range(0, N, block):
        e = min(s + block, N)
        A1[:, s:e] = Y.T @ mat[:, s:e]
    B1 = mat @ Y
    C1 = Y.T @ B1
    for s in range(0, N, block):
        e = min(s + block, N)
        mat[s:e] -= Y[s:e] @ A1
        mat[s:e] -= B1[s:e] @ Y.T
        mat[s:e] += Y[s:e] @ (C1 @ Y.T)
    return mat


class LinearOperatorMatrix:
    """Dense matrix of L in the psi = sqrt(W qw) g frame, plus metadata.

    `mat` is the canonical operator: the scaled raw quadrature matrix,
    symmetrized (the raw K2 is only O(h^2) symmetric because
    post-collision points are interpolated) with the invariant span
    projected out exactly.  `raw` is the scaled direct-quadrature matrix
    when retained.  In this frame the weighted inner product of nodal
    fields is the Euclidean one on psi-vectors.
    """

    def __init__(self, grid, sphere, scheme, prune_tol, mat, raw, nu_vals,
                 checksum=None):
        self.grid = grid
        self.sphere = sphere
        self.scheme = scheme
        self.prune_tol = prune_tol
        self.mat = mat
        self.raw = raw
        self.nu_vals = nu_vals
        self.checksum = checksum
        self.sqmeas = np.sqrt(grid.meas)
        self.invariants = scaled_invariant_basis(grid)

    def to_scaled(self, gvals):
        """Nodal field -> psi-frame vector."""
        return self.sqmeas * np.asarray(gvals)

    def from_scaled(self, psi):
        """psi-frame vector -> nodal field values.

        The division re-amplifies components in the deep tail where the
        measure underflows toward zero; downstream consumers only ever
        use such values through measure-weighted functionals.
        """
        return np.asarray(psi) / self.sqmeas

    def apply(self, g_field):
        psi = self.to_scaled(g_field.values)
        return DistributionField(self.grid, self.from_scaled(self.mat @ psi))


def _cache_name(grid, sphere, scheme, prune_tol, kind):
    return "L_%s_R%g_n%d_s%d_%s_p%.1e.bfdl" % (
        kind, grid.R, grid.n, sphere.order, scheme, prune_tol)


def _add_nu_correction(raw_mat, kernel):
    """Replace the table-consistent diagonal nu by the accurate one.

    Rows fully pruned from the operator table then act as multiplication
    by nu(v) instead of degenerating to zero rows (which would show up
    as spurious extra null vectors)."""
    delta = kernel.nu_values() - kernel.nu_values_consistent()
    raw_mat[np.diag_indices_from(raw_mat)] += delta
    return raw_mat


def assemble_L_matrix(grid, sphere, scheme="cubic", prune_tol=1e-14,
                      cache_dir=None, keep_raw=None, kernel=None):
    """Assemble the dense L matrix (canonical + raw) with disk caching."""
    if grid.n > DENSE_MAX_N:
        raise ValueError("dense assembly capped at n=%d (got n=%d)"
                         % (DENSE_MAX_N, grid.n))
    if keep_raw is None:
        keep_raw = grid.n <= DENSE_CACHE_MAX_N
    use_disk = cache_dir is not None and grid.n <= DENSE_CACHE_MAX_N
    if use_disk:
        path = os.path.join(cache_dir, _cache_name(grid, sphere, scheme,
                                                   prune_tol, "psi"))
        if os.path.exists(path):
            try:
                raw_mat, _ = load_matrix(path, grid.R, grid.n, sphere.order)
                return _finalize_L(grid, sphere, scheme, prune_tol, raw_mat,
                                   keep_raw, kernel, cache_hit=True,
                                   cache_path=path if use_disk else None)
            except CacheMismatch:
                raise
            except (CacheCorrupt, CacheError):
                # fall through to rebuild; harness logs the warning
                pass
    if kernel is None or kernel.scheme != scheme \
            or kernel.prune_tol != prune_tol:
        kernel = CollisionKernelCache(grid, sphere, prune_tol, scheme)
    N = grid.n_nodes
    raw_mat = np.zeros((N, N))
    _k.assemble_l(*kernel._args(), kernel.sqmeas, kernel.isqw,
                  grid.R, grid.h, grid.n, kernel.scheme_id, raw_mat)
    _add_nu_correction(raw_mat, kernel)
    checksum = None
    if use_disk:
        checksum = save_matrix(path, grid.R, grid.n, sphere.order, raw_mat)
    return _finalize_L(grid, sphere, scheme, prune_tol, raw_mat, keep_raw,
                       kernel, cache_hit=False, checksum=checksum)


def _finalize_L(grid, sphere, scheme, prune_tol, raw_mat, keep_raw,
                kernel=None, cache_hit=False, cache_path=None, checksum=None):
    nu_vals = None
    if kernel is not None and kernel.scheme == scheme \
            and kernel.prune_tol == prune_tol:
        nu_vals = kernel.nu_values()
    if nu_vals is None:
        kk = CollisionKernelCache(grid, sphere, prune_tol, scheme)
        nu_vals = kk.nu_values()
    raw_copy = raw_mat.copy() if keep_raw else None
    Y = scaled_invariant_basis(grid)
    mat = _symmetrize(raw_mat)
    mat = _project_null(mat, Y)
    op = LinearOperatorMatrix(grid, sphere, scheme, prune_tol, mat,
                              raw_copy, nu_vals, checksum)
    op.cache_hit = cache_hit
    return op

"""Fredholm correctors and transport coefficients of the linearized
collision operator.

Solves L x = rhs on the orthogonal complement of the invariant span by
conjugate gradients in the psi = sqrt(W qw) g frame, where the weighted
inner product is Euclidean and the canonical L is plainly symmetric
positive semidefinite.  Builds the corrector
fields A' = -L^{-1}A and B' = -L^{-1}B for
A(v) = (|v|^2/2 - K_A) v and B(v) = v (x) v - (|v|^2/3) I,
extracts the radial kernels alpha_L, beta_L by per-shell weighted least
squares (A' = -alpha_L A, B' = -beta_L B), and assembles the transport
coefficients nu* (shear viscosity), kappa* (heat conductivity) and the
conservation-law prefactor pair kappa1, kappa2, plus the coercivity
constant lambda measured against the nu-weighted norm.
"""

import csv
import json

import numpy as np
from dataclasses import dataclass, field, asdict
from scipy.linalg import eigh

from .velocity import DistributionField


class FredholmError(Exception):
    """Solvability violation or non-convergence of the Fredholm solve."""


# off-diagonal index pairs used for the viscosity correctors
_B_PAIRS = ((0, 1), (0, 2), (1, 2))


def build_A(grid, constants):
    """The three heat-flux fields A_i(v) = (|v|^2/2 - K_A) v_i."""
    fac = 0.5 * grid.r2 - constants.KA
    return [DistributionField(grid, fac * grid.nodes[:, i])
            for i in range(3)]


def build_B(grid):
    """The six independent stress fields B_ij = v_i v_j - delta_ij |v|^2/3.

    Order: diagonal (11, 22, 33) then off-diagonal (12, 13, 23).
    """
    v = grid.nodes
    out = [DistributionField(grid, v[:, i] ** 2 - grid.r2 / 3.0)
           for i in range(3)]
    out += [DistributionField(grid, v[:, i] * v[:, j])
            for i, j in _B_PAIRS]
    return out


def solve_fredholm(L, rhs, tol=1e-10, maxiter=10000):
    """CG solve of L x = rhs on the complement of the invariant span.

    Preconditions: rhs (numerically) orthogonal to all five invariants.
    Works on psi-frame vectors, re-projecting onto the complement every
    step to suppress kernel drift.  Returns x with <x, e> = 0 for all
    invariants e.
    """
    grid = L.grid
    Y = L.invariants                      # psi-orthonormal, (N, 5)
    b = L.to_scaled(np.asarray(rhs.values, dtype=float))

    def proj(a):
        return a - Y @ (Y.T @ a)

    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return DistributionField(grid, np.zeros(grid.n_nodes))
    kcomp = Y.T @ b
    if np.linalg.norm(kcomp) > 1e-8 * bnorm:
        raise FredholmError("right-hand side has an invariant component "
                            "of relative size %.3e"
                            % (np.linalg.norm(kcomp) / bnorm))
    b = proj(b)
    x = np.zeros(grid.n_nodes)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    target = tol * bnorm
    for _ in range(maxiter):
        Ap = proj(L.mat @ p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise FredholmError("operator lost positivity on the "
                                "complement (pAp=%.3e)" % pAp)
        al = rs / pAp
        x += al * p
        r -= al * Ap
        r = proj(r)
        rs_new = float(r @ r)
        if np.sqrt(rs_new) <= target:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    else:
        raise FredholmError("no convergence in %d iterations "
                            "(residual %.3e, target %.3e)"
                            % (maxiter, np.sqrt(rs), target))
    return DistributionField(grid, L.from_scaled(proj(x)))


def corrector_fields(L, grid, constants, tol=1e-10):
    """A'_i = -L^{-1} A_i and B'_ij = -L^{-1} B_ij (off-diagonal three).

    The sign makes the extracted alpha_L, beta_L positive and the
    transport coefficients dissipative.
    """
    A = build_A(grid, constants)
    B = build_B(grid)[3:]
    Ap = [DistributionField(grid, -solve_fredholm(L, f, tol).values)
          for f in A]
    Bp = [DistributionField(grid, -solve_fredholm(L, f, tol).values)
          for f in B]
    return A, Ap, B, Bp


@dataclass
class RadialKernelTable:
    """Per-shell alpha_L/beta_L samples with fit diagnostics."""
    r: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    count: np.ndarray
    alpha_degenerate: np.ndarray     # True where the A-fit had no signal
    iso_alpha: np.ndarray            # worst per-component relative spread
    iso_beta: np.ndarray


def _shell_index(grid):
    width = 0.5 * grid.h
    return np.rint(grid.r / width).astype(int), width


def extract_alpha_beta(grid, A, Ap, B_off, Bp_off, degenerate_rtol=1e-6):
    """Weighted least-squares shell fits of -A'/A and -B'/B.

    Shells are |v|-bins of width h/2.  The fit uses the first component
    (A_1 resp. B_12), matching the component used for the direct
    transport inner products; summing the fitted kernel against the same
    shell weights then reproduces those inner products up to the
    degenerate-shell fill.  The remaining components enter only the
    isotropy diagnostics (the sphere rule singles out the z axis, so the
    components differ at the quadrature-anisotropy level).  Shells where
    the fit component vanishes (around |v|^2 = 2 K_A, and the origin)
    are flagged degenerate and filled by linear interpolation in r.
    """
    sid, width = _shell_index(grid)
    n_sh = int(sid.max()) + 1
    meas = grid.meas
    count = np.zeros(n_sh, dtype=int)
    np.add.at(count, sid, 1)
    comp_a = np.zeros((3, n_sh))
    compd_a = np.zeros((3, n_sh))
    comp_b = np.zeros((3, n_sh))
    compd_b = np.zeros((3, n_sh))
    for i in range(3):
        av = A[i].values
        np.add.at(comp_a[i], sid, -meas * av * Ap[i].values)
        np.add.at(compd_a[i], sid, meas * av * av)
        bv = B_off[i].values
        np.add.at(comp_b[i], sid, -meas * bv * Bp_off[i].values)
        np.add.at(compd_b[i], sid, meas * bv * bv)
    num_a, den_a = comp_a[0], compd_a[0]
    num_b, den_b = comp_b[0], compd_b[0]
    r = width * np.arange(n_sh)
    deg_a = den_a <= degenerate_rtol * den_a.max()
    deg_b = den_b <= degenerate_rtol * den_b.max()
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = np.where(deg_a, np.nan, num_a / np.where(deg_a, 1.0, den_a))
        beta = np.where(deg_b, np.nan, num_b / np.where(deg_b, 1.0, den_b))
        ca = np.where(compd_a > 0, comp_a / np.where(compd_a > 0, compd_a, 1.0),
                      np.nan)
        cb = np.where(compd_b > 0, comp_b / np.where(compd_b > 0, compd_b, 1.0),
                      np.nan)
    iso_a = _relative_spread(ca, alpha)
    iso_b = _relative_spread(cb, beta)
    alpha = _fill_degenerate(r, alpha, deg_a)
    beta = _fill_degenerate(r, beta, deg_b)
    return RadialKernelTable(r, alpha, beta, count, deg_a, iso_a, iso_b)


def _relative_spread(per_comp, fit):
    with np.errstate(invalid="ignore", divide="ignore"):
        filled = np.where(np.isfinite(per_comp), per_comp, fit[None, :])
        spread = np.max(np.abs(filled - fit[None, :]), axis=0)
        return np.where(np.isfinite(fit) & (np.abs(fit) > 0),
                        spread / np.abs(fit), np.nan)


def _fill_degenerate(r, vals, flag):
    good = ~flag & np.isfinite(vals)
    if good.sum() < 2:
        return vals
    out = vals.copy()
    out[~good] = np.interp(r[~good], r[good], vals[good])
    return out


@dataclass
class TransportCoefficients:
    """Transport coefficients of the limiting fluid system."""
    nu_star: float
    kappa_star: float
    kappa1: float
    kappa2: float
    lambda_coercive: float
    nu_star_shell: float       # second route via the beta_L shell table
    kappa_star_shell: float
    grid_R: float
    grid_n: int
    sphere_order: int
    meta: dict = field(default_factory=dict)

    def validate(self):
        if not (self.nu_star > 0 and self.kappa_star > 0):
            raise ValueError("transport coefficients must be positive "
                             "(nu*=%g, kappa*=%g)"
                             % (self.nu_star, self.kappa_star))
        if self.lambda_coercive <= 0:
            raise ValueError("coercivity constant must be positive")


def transport_coefficients(L, grid, constants, tol=1e-10,
                           lambda_value=None, nu_vals=None):
    """Assemble nu*, kappa*, kappa1, kappa2, lambda and the shell table.

    Primary route: nu* = -<B'_12, B_12>, kappa* = -<A'_1, A_1>;
    secondary route through the alpha_L/beta_L shell fits:
    nu* = <beta_L v1^2 v2^2>, kappa* = <alpha_L (|v|^2/2-K_A)^2 v1^2>.
    kappa1, kappa2 attach the conservation-law prefactors to the shared
    kappa* integral, so kappa1/kappa2 = ((2E0/3E2)Kg - 1)/(2E0/3E2).
    """
    A, Ap, B_off, Bp_off = corrector_fields(L, grid, constants, tol)
    meas = grid.meas
    nu_star = -float(np.dot(B_off[0].values * Bp_off[0].values, meas))
    kappa_star = -float(np.dot(A[0].values * Ap[0].values, meas))
    table = extract_alpha_beta(grid, A, Ap, B_off, Bp_off)
    sid, _ = _shell_index(grid)
    w_nu = meas * B_off[0].values ** 2          # v1^2 v2^2 weight
    w_ka = meas * A[0].values ** 2              # (|v|^2/2-KA)^2 v1^2
    shell_wn = np.zeros(table.r.size)
    shell_wk = np.zeros(table.r.size)
    np.add.at(shell_wn, sid, w_nu)
    np.add.at(shell_wk, sid, w_ka)
    nu_star_shell = float(np.nansum(table.beta * shell_wn))
    kappa_star_shell = float(np.nansum(table.alpha * shell_wk))
    c = constants
    den = c.KA * c.E0 - 1.5 * c.E2
    s1 = ((2.0 * c.E0 / (3.0 * c.E2)) * c.Kg - 1.0) / den
    s2 = (2.0 * c.E0 / (3.0 * c.E2)) / den
    if lambda_value is None:
        lambda_value = coercivity_lambda(
            L, L.nu_vals if nu_vals is None else nu_vals)
    tc = TransportCoefficients(
        nu_star, kappa_star, s1 * kappa_star, s2 * kappa_star,
        float(lambda_value), nu_star_shell, kappa_star_shell,
        grid.R, grid.n, L.sphere.order,
        meta={"solver_tol": tol,
              "iso_alpha_max": float(np.nanmax(table.iso_alpha)),
              "iso_beta_max": float(np.nanmax(table.iso_beta))})
    tc.validate()
    return tc, table, (A, Ap, B_off, Bp_off)


def coercivity_lambda(L, nu_vals, shift=None):
    """The sharp constant of <Lg,g> >= lambda |{I-P}g|_nu^2.

    In the psi frame this is min psi^T L psi / psi^T diag(nu) psi over
    the Euclidean complement of the invariant columns Y.  Implemented as
    the 6th-smallest eigenvalue of the pencil (L, M-hat), where M-hat
    replaces diag(nu) by its complement-restricted form plus an SPD term
    on the invariant span; the positive-eigenvalue eigenvectors then
    satisfy the complement constraint exactly.  Dense generalized
    eigenproblem (suitable up to n ~ 17; larger grids use the iterative
    path in the refinement study).
    """
    nu_vals = np.asarray(nu_vals, dtype=float)
    if np.any(nu_vals <= 0):
        raise ValueError("collision frequency must be positive")
    Y = L.invariants
    if shift is None:
        shift = float(np.median(nu_vals))
    MY = nu_vals[:, None] * Y
    YtMY = Y.T @ MY
    Mhat = np.diag(nu_vals)
    Mhat -= Y @ MY.T
    Mhat -= MY @ Y.T
    Mhat += Y @ (YtMY @ Y.T)
    Mhat += shift * (Y @ Y.T)
    Mhat = 0.5 * (Mhat + Mhat.T)
    vals = eigh(L.mat, Mhat, eigvals_only=True,
                subset_by_index=[0, 6])
    vals = np.sort(vals)
    lam = float(vals[5])
    if lam <= 0:
        raise FredholmError("nonpositive coercivity constant %.3e" % lam)
    return lam


def null_space_eigenvalues(L, k=8):
    """Smallest k eigenvalues of the canonical symmetric psi-frame matrix.

    The first five vanish by construction of the null projection.
    """
    vals = eigh(L.mat, eigvals_only=True, subset_by_index=[0, k - 1])
    return np.sort(vals)


def export_kernel_table_csv(path, table):
    """CSV columns: r, alpha_L, beta_L, shell_count."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["r", "alpha_L", "beta_L", "shell_count"])
        for i in range(table.r.size):
            w.writerow(["%.17g" % table.r[i], "%.17g" % table.alpha[i],
                        "%.17g" % table.beta[i], int(table.count[i])])


def export_transport_report(path_txt, path_json, tc):
    """key=value text report plus machine-readable JSON."""
    d = asdict(tc)
    meta = d.pop("meta")
    with open(path_txt, "w") as f:
        for k, v in d.items():
            f.write("%s=%.17g\n" % (k, v) if isinstance(v, float)
                    else "%s=%s\n" % (k, v))
        for k, v in meta.items():
            f.write("meta.%s=%s\n" % (k, v))
    with open(path_json, "w") as f:
        json.dump({**d, "meta": meta}, f, indent=1, sort_keys=True)
        f.write("\n")

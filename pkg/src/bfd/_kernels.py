"""Compiled quadrature kernels for the collision operators.

Everything here loops over a pruned table of (node, partner) pairs and
the sphere rule.  Equilibrium factors are evaluated exactly at the exact
post-collision points.  Perturbation-type fields are interpolated in the
half-density scaling: the nodal array passed for interpolation holds
x = sqrt(W) g with W = mu(1-mu), and the point value of g is
interp(x)(v') / sqrt(W(v')).  This is the discretization of the bounded
symmetrized kernel sqrt(W/W') k(v,v'): with it, every entry of the
sqrt(W qw)-scaled operator matrix is uniformly bounded, which is what
keeps the symmetrized spectrum clean across the steep Fermi-Dirac weight
gradient (interpolating g directly leaves entries growing like
exp(6 h^2) after weighted symmetrization).

The nonlinear C kernels either interpolate F - mu directly
("compensated", robust for arbitrary admissible F) or interpolate
X = (F - mu)/sqrt(W) and rescale by sqrt(W) at the point
("perturbative"), which is the convention under which the discrete
eps-expansion C(mu + eps W g) = eps W (-L g + eps Q + eps^2 T) holds to
rounding.

Interpolation schemes:
  0  tensor 2-point (trilinear), zero outside the domain
  1  tensor 4-point Lagrange (tricubic), zero outside
  2  tricubic with clamped-stencil extrapolation (for logit fields)

All kernels parallelize over output rows with a fixed sequential
accumulation order per row, so results are bit-identical for any
thread count.
"""

import numpy as np
from numba import njit, prange

_NOPT = dict(cache=True, fastmath=False)


@njit(inline="always", **_NOPT)
def _sig(x):
    # stable logistic 1/(1+e^x)
    if x >= 0.0:
        e = np.exp(-x)
        return e / (1.0 + e)
    return 1.0 / (1.0 + np.exp(x))


@njit(inline="always", **_NOPT)
def _cubic_axis(t, n):
    # clamped 4-point Lagrange stencil along one axis; t in grid units
    b = int(np.floor(t)) - 1
    if b < 0:
        b = 0
    if b > n - 4:
        b = n - 4
    s = t - b
    w0 = -(s - 1.0) * (s - 2.0) * (s - 3.0) / 6.0
    w1 = s * (s - 2.0) * (s - 3.0) / 2.0
    w2 = -s * (s - 1.0) * (s - 3.0) / 2.0
    w3 = s * (s - 1.0) * (s - 2.0) / 6.0
    return b, w0, w1, w2, w3


@njit(inline="always", **_NOPT)
def _lin_axis(t, n):
    i0 = int(np.floor(t))
    if i0 > n - 2:
        i0 = n - 2
    if i0 < 0:
        i0 = 0
    f = t - i0
    return i0, 1.0 - f, f


@njit(inline="always", **_NOPT)
def _interp(arr, px, py, pz, R, h, n, scheme):
    """Point evaluation of a nodal array; see module docstring for schemes."""
    tx = (px + R) / h
    ty = (py + R) / h
    tz = (pz + R) / h
    if scheme != 2:
        if (tx < 0.0 or tx > n - 1.0 or ty < 0.0 or ty > n - 1.0
                or tz < 0.0 or tz > n - 1.0):
            return 0.0
    if scheme == 0:
        ix, ax0, ax1 = _lin_axis(tx, n)
        iy, ay0, ay1 = _lin_axis(ty, n)
        iz, az0, az1 = _lin_axis(tz, n)
        base = (ix * n + iy) * n + iz
        b1 = base + n * n
        v0 = (ax0 * (ay0 * arr[base] + ay1 * arr[base + n])
              + ax1 * (ay0 * arr[b1] + ay1 * arr[b1 + n]))
        v1 = (ax0 * (ay0 * arr[base + 1] + ay1 * arr[base + n + 1])
              + ax1 * (ay0 * arr[b1 + 1] + ay1 * arr[b1 + n + 1]))
        return az0 * v0 + az1 * v1
    bx, wx0, wx1, wx2, wx3 = _cubic_axis(tx, n)
    by, wy0, wy1, wy2, wy3 = _cubic_axis(ty, n)
    bz, wz0, wz1, wz2, wz3 = _cubic_axis(tz, n)
    out = 0.0
    for dx in range(4):
        if dx == 0:
            wx = wx0
        elif dx == 1:
            wx = wx1
        elif dx == 2:
            wx = wx2
        else:
            wx = wx3
        rowx = (bx + dx) * n
        for dy in range(4):
            if dy == 0:
                wy = wy0
            elif dy == 1:
                wy = wy1
            elif dy == 2:
                wy = wy2
            else:
                wy = wy3
            base = (rowx + by + dy) * n + bz
            s = (wz0 * arr[base] + wz1 * arr[base + 1]
                 + wz2 * arr[base + 2] + wz3 * arr[base + 3])
            out += wx * wy * s
    return out


@njit(**_NOPT)
def count_pairs(nodes, r2, tol, symmetric):
    """Count retained partners per node.

    symmetric=True uses the weighted-entry bound |dv| e^{2-(r_i^2+r_j^2)/2}
    (right prune for L/Q/T/C, whose outputs matter in the weighted norm);
    symmetric=False uses the row bound |dv| e^{1-r_j^2/2}, which keeps the
    unweighted row sums (the collision frequency) accurate at every node.
    """
    N = nodes.shape[0]
    counts = np.zeros(N + 1, dtype=np.int64)
    for i in range(N):
        c = 0
        for j in range(N):
            if i == j:
                continue
            dx = nodes[j, 0] - nodes[i, 0]
            dy = nodes[j, 1] - nodes[i, 1]
            dz = nodes[j, 2] - nodes[i, 2]
            dist = np.sqrt(dx * dx + dy * dy + dz * dz)
            if symmetric:
                b = dist * np.exp(2.0 - 0.5 * (r2[i] + r2[j]))
            else:
                b = dist * np.exp(1.0 - 0.5 * r2[j])
            if b >= tol:
                c += 1
        counts[i + 1] = c
    for i in range(N):
        counts[i + 1] += counts[i]
    return counts


@njit(**_NOPT)
def fill_pairs(nodes, r2, tol, symmetric, row_ptr):
    cols = np.empty(row_ptr[-1], dtype=np.int32)
    N = nodes.shape[0]
    for i in range(N):
        k = row_ptr[i]
        for j in range(N):
            if i == j:
                continue
            dx = nodes[j, 0] - nodes[i, 0]
            dy = nodes[j, 1] - nodes[i, 1]
            dz = nodes[j, 2] - nodes[i, 2]
            dist = np.sqrt(dx * dx + dy * dy + dz * dz)
            if symmetric:
                b = dist * np.exp(2.0 - 0.5 * (r2[i] + r2[j]))
            else:
                b = dist * np.exp(1.0 - 0.5 * r2[j])
            if b >= tol:
                cols[k] = j
                k += 1
    return cols


@njit(parallel=True, **_NOPT)
def collision_c(nodes, r2, mu_n, W_n, qw, row_ptr, cols, dirs, wdir,
                pert, R, h, n, scheme, mult_w, out):
    """C(F) for a single distribution.

    mult_w=0: F = mu + pert, post-collision pert interpolated directly.
    mult_w=1: pert holds X = (F-mu)/sqrt(W); post-collision
              F' = mu' + sqrt(W') interp(X).
    """
    N = nodes.shape[0]
    K = dirs.shape[0]
    for i in prange(N):
        vx = nodes[i, 0]
        vy = nodes[i, 1]
        vz = nodes[i, 2]
        Fi = mu_n[i] + (np.sqrt(W_n[i]) * pert[i] if mult_w == 1
                        else pert[i])
        acc = 0.0
        for p in range(row_ptr[i], row_ptr[i + 1]):
            j = cols[p]
            dx = nodes[j, 0] - vx
            dy = nodes[j, 1] - vy
            dz = nodes[j, 2] - vz
            F1 = mu_n[j] + (np.sqrt(W_n[j]) * pert[j] if mult_w == 1
                            else pert[j])
            base_w = qw[j]
            for k in range(K):
                proj = dx * dirs[k, 0] + dy * dirs[k, 1] + dz * dirs[k, 2]
                if proj == 0.0:
                    continue
                w = abs(proj) * wdir[k] * base_w
                ox = proj * dirs[k, 0]
                oy = proj * dirs[k, 1]
                oz = proj * dirs[k, 2]
                px = vx + ox
                py = vy + oy
                pz = vz + oz
                qx = nodes[j, 0] - ox
                qy = nodes[j, 1] - oy
                qz = nodes[j, 2] - oz
                mup = _sig(0.5 * (px * px + py * py + pz * pz) - 1.0)
                mu1p = _sig(0.5 * (qx * qx + qy * qy + qz * qz) - 1.0)
                ap = _interp(pert, px, py, pz, R, h, n, scheme)
                aq = _interp(pert, qx, qy, qz, R, h, n, scheme)
                if mult_w == 1:
                    ap *= np.sqrt(mup * (1.0 - mup))
                    aq *= np.sqrt(mu1p * (1.0 - mu1p))
                Fp = mup + ap
                F1p = mu1p + aq
                acc += w * (Fp * F1p * (1.0 - Fi - F1)
                            - Fi * F1 * (1.0 - Fp - F1p))
        out[i] = acc


@njit(parallel=True, **_NOPT)
def collision_c_logit(nodes, qw, row_ptr, cols, dirs, wdir,
                      lam, F_n, R, h, n, out):
    """C(F) with post-collision F from tricubic interpolation of logit F."""
    N = nodes.shape[0]
    K = dirs.shape[0]
    for i in prange(N):
        vx = nodes[i, 0]
        vy = nodes[i, 1]
        vz = nodes[i, 2]
        Fi = F_n[i]
        acc = 0.0
        for p in range(row_ptr[i], row_ptr[i + 1]):
            j = cols[p]
            dx = nodes[j, 0] - vx
            dy = nodes[j, 1] - vy
            dz = nodes[j, 2] - vz
            F1 = F_n[j]
            base_w = qw[j]
            for k in range(K):
                proj = dx * dirs[k, 0] + dy * dirs[k, 1] + dz * dirs[k, 2]
                if proj == 0.0:
                    continue
                w = abs(proj) * wdir[k] * base_w
                ox = proj * dirs[k, 0]
                oy = proj * dirs[k, 1]
                oz = proj * dirs[k, 2]
                Fp = _sig(-_interp(lam, vx + ox, vy + oy, vz + oz,
                                   R, h, n, 2))
                F1p = _sig(-_interp(lam, nodes[j, 0] - ox, nodes[j, 1] - oy,
                                    nodes[j, 2] - oz, R, h, n, 2))
                acc += w * (Fp * F1p * (1.0 - Fi - F1)
                            - Fi * F1 * (1.0 - Fp - F1p))
        out[i] = acc


@njit(parallel=True, **_NOPT)
def nu_vector(nodes, r2, mu_n, om_n, W_n, qw, row_ptr, cols, dirs, wdir, out):
    """Collision frequency nu(v) = int |(v1-v).w| N / (mu(1-mu)) dw dv1."""
    N = nodes.shape[0]
    K = dirs.shape[0]
    for i in prange(N):
        vx = nodes[i, 0]
        vy = nodes[i, 1]
        vz = nodes[i, 2]
        inv_mu = 1.0 / mu_n[i]
        acc = 0.0
        for p in range(row_ptr[i], row_ptr[i + 1]):
            j = cols[p]
            dx = nodes[j, 0] - vx
            dy = nodes[j, 1] - vy
            dz = nodes[j, 2] - vz
            # N/W(v) = mu' mu_1' (1-mu_1) / mu
            fac = qw[j] * om_n[j] * inv_mu
            for k in range(K):
                proj = dx * dirs[k, 0] + dy * dirs[k, 1] + dz * dirs[k, 2]
                if proj == 0.0:
                    continue
                ox = proj * dirs[k, 0]
                oy = proj * dirs[k, 1]
                oz = proj * dirs[k, 2]
                px = vx + ox
                py = vy + oy
                pz = vz + oz
                qx = nodes[j, 0] - ox
                qy = nodes[j, 1] - oy
                qz = nodes[j, 2] - oz
                mup = _sig(0.5 * (px * px + py * py + pz * pz) - 1.0)
                mu1p = _sig(0.5 * (qx * qx + qy * qy + qz * qz) - 1.0)
                acc += abs(proj) * wdir[k] * fac * mup * mu1p
        out[i] = acc


@njit(inline="always", **_NOPT)
def _scatter(row, px, py, pz, coef, scale, R, h, n, scheme):
    """row[s] += coef * stencil_weight_s * scale[s] over the point stencil."""
    tx = (px + R) / h
    ty = (py + R) / h
    tz = (pz + R) / h
    if (tx < 0.0 or tx > n - 1.0 or ty < 0.0 or ty > n - 1.0
            or tz < 0.0 or tz > n - 1.0):
        return
    if scheme == 0:
        ix, ax0, ax1 = _lin_axis(tx, n)
        iy, ay0, ay1 = _lin_axis(ty, n)
        iz, az0, az1 = _lin_axis(tz, n)
        for dx in range(2):
            wx = ax1 if dx else ax0
            for dy in range(2):
                wy = ay1 if dy else ay0
                base = ((ix + dx) * n + iy + dy) * n + iz
                row[base] += coef * wx * wy * az0 * scale[base]
                row[base + 1] += coef * wx * wy * az1 * scale[base + 1]
        return
    bx, wx0, wx1, wx2, wx3 = _cubic_axis(tx, n)
    by, wy0, wy1, wy2, wy3 = _cubic_axis(ty, n)
    bz, wz0, wz1, wz2, wz3 = _cubic_axis(tz, n)
    for dx in range(4):
        if dx == 0:
            wx = wx0
        elif dx == 1:
            wx = wx1
        elif dx == 2:
            wx = wx2
        else:
            wx = wx3
        rowx = (bx + dx) * n
        for dy in range(4):
            if dy == 0:
                wy = wy0
            elif dy == 1:
                wy = wy1
            elif dy == 2:
                wy = wy2
            else:
                wy = wy3
            base = (rowx + by + dy) * n + bz
            cc = coef * wx * wy
            row[base] += cc * wz0 * scale[base]
            row[base + 1] += cc * wz1 * scale[base + 1]
            row[base + 2] += cc * wz2 * scale[base + 2]
            row[base + 3] += cc * wz3 * scale[base + 3]


@njit(parallel=True, **_NOPT)
def assemble_l(nodes, r2, mu_n, om_n, W_n, qw, row_ptr, cols, dirs, wdir,
               sqmeas, isqw, R, h, n, scheme, out):
    """Dense matrix of L = nu - K2 + K1 in the sqrt(W qw)-scaled frame.

    Row i holds sqrt(meas_i) L_nodal[i, :] / sqrt(meas_:), the similarity
    under which the weighted-L^2 inner product becomes Euclidean and L is
    symmetric up to quadrature error.  sqmeas = sqrt(W qw) per node,
    isqw = 1/sqrt(qw) per node (the scatter converts the half-density
    stencil weight to this frame via sqrt(meas_i) / (sqrt(qw_s) sqrt(W'))).
    """
    N = nodes.shape[0]
    K = dirs.shape[0]
    for i in prange(N):
        vx = nodes[i, 0]
        vy = nodes[i, 1]
        vz = nodes[i, 2]
        inv_mu = 1.0 / mu_n[i]
        smi = sqmeas[i]
        row = out[i]
        for p in range(row_ptr[i], row_ptr[i + 1]):
            j = cols[p]
            dx = nodes[j, 0] - vx
            dy = nodes[j, 1] - vy
            dz = nodes[j, 2] - vz
            fac0 = qw[j] * om_n[j] * inv_mu
            rat_j = smi / sqmeas[j]
            for k in range(K):
                proj = dx * dirs[k, 0] + dy * dirs[k, 1] + dz * dirs[k, 2]
                if proj == 0.0:
                    continue
                ox = proj * dirs[k, 0]
                oy = proj * dirs[k, 1]
                oz = proj * dirs[k, 2]
                px = vx + ox
                py = vy + oy
                pz = vz + oz
                qx = nodes[j, 0] - ox
                qy = nodes[j, 1] - oy
                qz = nodes[j, 2] - oz
                mup = _sig(0.5 * (px * px + py * py + pz * pz) - 1.0)
                mu1p = _sig(0.5 * (qx * qx + qy * qy + qz * qz) - 1.0)
                afac = abs(proj) * wdir[k] * fac0 * mup * mu1p
                row[i] += afac                  # nu diagonal (scale-free)
                row[j] += afac * rat_j          # +K1
                sqwp = np.sqrt(mup * (1.0 - mup))
                sqw1p = np.sqrt(mu1p * (1.0 - mu1p))
                _scatter(row, px, py, pz, -afac * smi / sqwp, isqw,
                         R, h, n, scheme)
                _scatter(row, qx, qy, qz, -afac * smi / sqw1p, isqw,
                         R, h, n, scheme)


@njit(parallel=True, **_NOPT)
def apply_k(nodes, r2, mu_n, om_n, W_n, qw, row_ptr, cols, dirs, wdir,
            g, xg, R, h, n, scheme, out1, out2):
    """K1 g and K2 g in one pass; xg = sqrt(W) g is the interpolated array."""
    N = nodes.shape[0]
    K = dirs.shape[0]
    for i in prange(N):
        vx = nodes[i, 0]
        vy = nodes[i, 1]
        vz = nodes[i, 2]
        inv_mu = 1.0 / mu_n[i]
        a1 = 0.0
        a2 = 0.0
        for p in range(row_ptr[i], row_ptr[i + 1]):
            j = cols[p]
            dx = nodes[j, 0] - vx
            dy = nodes[j, 1] - vy
            dz = nodes[j, 2] - vz
            fac0 = qw[j] * om_n[j] * inv_mu
            gj = g[j]
            for k in range(K):
                proj = dx * dirs[k, 0] + dy * dirs[k, 1] + dz * dirs[k, 2]
                if proj == 0.0:
                    continue
                ox = proj * dirs[k, 0]
                oy = proj * dirs[k, 1]
                oz = proj * dirs[k, 2]
                px = vx + ox
                py = vy + oy
                pz = vz + oz
                qx = nodes[j, 0] - ox
                qy = nodes[j, 1] - oy
                qz = nodes[j, 2] - oz
                mup = _sig(0.5 * (px * px + py * py + pz * pz) - 1.0)
                mu1p = _sig(0.5 * (qx * qx + qy * qy + qz * qz) - 1.0)
                afac = abs(proj) * wdir[k] * fac0 * mup * mu1p
                a1 += afac * gj
                gp = _interp(xg, px, py, pz, R, h, n, scheme) \
                    / np.sqrt(mup * (1.0 - mup))
                g1p = _interp(xg, qx, qy, qz, R, h, n, scheme) \
                    / np.sqrt(mu1p * (1.0 - mu1p))
                a2 += afac * (gp + g1p)
        out1[i] = a1
        out2[i] = a2


@njit(parallel=True, **_NOPT)
def apply_q(nodes, r2, mu_n, om_n, W_n, qw, row_ptr, cols, dirs, wdir,
            f, xf, g, xg, R, h, n, scheme, out):
    """The six-term bilinear collision form Q(f,g); x* = sqrt(W) * field."""
    N = nodes.shape[0]
    K = dirs.shape[0]
    for i in prange(N):
        vx = nodes[i, 0]
        vy = nodes[i, 1]
        vz = nodes[i, 2]
        inv_mu = 1.0 / mu_n[i]
        mui = mu_n[i]
        gi = g[i]
        acc = 0.0
        for p in range(row_ptr[i], row_ptr[i + 1]):
            j = cols[p]
            dx = nodes[j, 0] - vx
            dy = nodes[j, 1] - vy
            dz = nodes[j, 2] - vz
            fac0 = qw[j] * om_n[j] * inv_mu
            mu1 = mu_n[j]
            f1 = f[j]
            g1 = g[j]
            for k in range(K):
                proj = dx * dirs[k, 0] + dy * dirs[k, 1] + dz * dirs[k, 2]
                if proj == 0.0:
                    continue
                ox = proj * dirs[k, 0]
                oy = proj * dirs[k, 1]
                oz = proj * dirs[k, 2]
                px = vx + ox
                py = vy + oy
                pz = vz + oz
                qx = nodes[j, 0] - ox
                qy = nodes[j, 1] - oy
                qz = nodes[j, 2] - oz
                mup = _sig(0.5 * (px * px + py * py + pz * pz) - 1.0)
                mu1p = _sig(0.5 * (qx * qx + qy * qy + qz * qz) - 1.0)
                afac = abs(proj) * wdir[k] * fac0 * mup * mu1p
                iswp = 1.0 / np.sqrt(mup * (1.0 - mup))
                isw1p = 1.0 / np.sqrt(mu1p * (1.0 - mu1p))
                fp = _interp(xf, px, py, pz, R, h, n, scheme) * iswp
                f1p = _interp(xf, qx, qy, qz, R, h, n, scheme) * isw1p
                gp = _interp(xg, px, py, pz, R, h, n, scheme) * iswp
                g1p = _interp(xg, qx, qy, qz, R, h, n, scheme) * isw1p
                term = ((1.0 - mu1p - mup) * f1p * gp
                        - (1.0 - mu1 - mui) * f1 * gi
                        + (mu1p * f1p + mup * fp) * g1
                        - (f1p + fp) * mu1 * g1
                        + (mu1p * f1p + mup * fp) * gi
                        - (f1p + fp) * mui * gi)
                acc += afac * term
        out[i] = acc


@njit(parallel=True, **_NOPT)
def apply_t(nodes, r2, mu_n, om_n, W_n, qw, row_ptr, cols, dirs, wdir,
            f, xf, g, xg, hh, xh, R, h, n, scheme, out):
    """The eight-term trilinear collision form T(f,g,h); x* = sqrt(W)*field."""
    N = nodes.shape[0]
    K = dirs.shape[0]
    for i in prange(N):
        vx = nodes[i, 0]
        vy = nodes[i, 1]
        vz = nodes[i, 2]
        inv_mu = 1.0 / mu_n[i]
        mui = mu_n[i]
        gi = g[i]
        hi = hh[i]
        acc = 0.0
        for p in range(row_ptr[i], row_ptr[i + 1]):
            j = cols[p]
            dx = nodes[j, 0] - vx
            dy = nodes[j, 1] - vy
            dz = nodes[j, 2] - vz
            fac0 = qw[j] * om_n[j] * inv_mu
            mu1 = mu_n[j]
            f1 = f[j]
            h1 = hh[j]
            for k in range(K):
                proj = dx * dirs[k, 0] + dy * dirs[k, 1] + dz * dirs[k, 2]
                if proj == 0.0:
                    continue
                ox = proj * dirs[k, 0]
                oy = proj * dirs[k, 1]
                oz = proj * dirs[k, 2]
                px = vx + ox
                py = vy + oy
                pz = vz + oz
                qx = nodes[j, 0] - ox
                qy = nodes[j, 1] - oy
                qz = nodes[j, 2] - oz
                mup = _sig(0.5 * (px * px + py * py + pz * pz) - 1.0)
                mu1p = _sig(0.5 * (qx * qx + qy * qy + qz * qz) - 1.0)
                afac = abs(proj) * wdir[k] * fac0 * mup * mu1p
                iswp = 1.0 / np.sqrt(mup * (1.0 - mup))
                isw1p = 1.0 / np.sqrt(mu1p * (1.0 - mu1p))
                fp = _interp(xf, px, py, pz, R, h, n, scheme) * iswp
                f1p = _interp(xf, qx, qy, qz, R, h, n, scheme) * isw1p
                gp = _interp(xg, px, py, pz, R, h, n, scheme) * iswp
                g1p = _interp(xg, qx, qy, qz, R, h, n, scheme) * isw1p
                hp = _interp(xh, px, py, pz, R, h, n, scheme) * iswp
                h1p = _interp(xh, qx, qy, qz, R, h, n, scheme) * isw1p
                fg_loss = f1 * gi          # f_1 g
                fg_gain = f1p * gp         # f_1' g'
                term = (mu1 * mui * fg_loss * (h1p + hp)
                        - mu1p * mup * fg_gain * (h1 + hi)
                        + mu1 * mu1p * (fg_gain * h1 - fg_loss * h1p)
                        + mui * mu1p * (fg_gain * hi - fg_loss * h1p)
                        + mu1 * mup * (fg_gain * h1 - fg_loss * hp)
                        + mui * mup * (fg_gain * hi - fg_loss * hp)
                        + fg_loss * (mu1p * h1p + mup * hp)
                        - fg_gain * (mu1 * h1 + mui * hi))
                acc += afac * term
        out[i] = acc


@njit(parallel=True, **_NOPT)
def collision_c_batch(nodes, mu_n, W_n, qw, row_ptr, cols, dirs, wdir,
                      pert, R, h, n, out):
    """C(F) for many spatial columns at once, perturbative trilinear.

    pert holds X = (F - mu)/sqrt(W) with shape (n_nodes, n_cols),
    C-contiguous; out accumulates C(F) with the same shape.  The inner
    column loop is the vectorization target.
    """
    N = nodes.shape[0]
    K = dirs.shape[0]
    C = pert.shape[1]
    nn = n
    for i in prange(N):
        vx = nodes[i, 0]
        vy = nodes[i, 1]
        vz = nodes[i, 2]
        mui = mu_n[i]
        sqWi = np.sqrt(W_n[i])
        orow = out[i]
        prow_i = pert[i]
        for p in range(row_ptr[i], row_ptr[i + 1]):
            j = cols[p]
            dx = nodes[j, 0] - vx
            dy = nodes[j, 1] - vy
            dz = nodes[j, 2] - vz
            mu1 = mu_n[j]
            sqW1 = np.sqrt(W_n[j])
            base_w = qw[j]
            prow_j = pert[j]
            for k in range(K):
                proj = dx * dirs[k, 0] + dy * dirs[k, 1] + dz * dirs[k, 2]
                if proj == 0.0:
                    continue
                w = abs(proj) * wdir[k] * base_w
                ox = proj * dirs[k, 0]
                oy = proj * dirs[k, 1]
                oz = proj * dirs[k, 2]
                px = vx + ox
                py = vy + oy
                pz = vz + oz
                qx = nodes[j, 0] - ox
                qy = nodes[j, 1] - oy
                qz = nodes[j, 2] - oz
                mup = _sig(0.5 * (px * px + py * py + pz * pz) - 1.0)
                mu1p = _sig(0.5 * (qx * qx + qy * qy + qz * qz) - 1.0)
                sqWp = np.sqrt(mup * (1.0 - mup))
                sqW1p = np.sqrt(mu1p * (1.0 - mu1p))
                # trilinear stencil of both post-collision points
                bp = 0
                axp0 = axp1 = ayp0 = ayp1 = azp0 = azp1 = 0.0
                bq = 0
                axq0 = axq1 = ayq0 = ayq1 = azq0 = azq1 = 0.0
                tx = (px + R) / h
                ty = (py + R) / h
                tz = (pz + R) / h
                in_p = (tx >= 0.0 and tx <= nn - 1.0 and ty >= 0.0
                        and ty <= nn - 1.0 and tz >= 0.0 and tz <= nn - 1.0)
                if in_p:
                    ixp, axp0, axp1 = _lin_axis(tx, nn)
                    iyp, ayp0, ayp1 = _lin_axis(ty, nn)
                    izp, azp0, azp1 = _lin_axis(tz, nn)
                    bp = (ixp * nn + iyp) * nn + izp
                tx = (qx + R) / h
                ty = (qy + R) / h
                tz = (qz + R) / h
                in_q = (tx >= 0.0 and tx <= nn - 1.0 and ty >= 0.0
                        and ty <= nn - 1.0 and tz >= 0.0 and tz <= nn - 1.0)
                if in_q:
                    ixq, axq0, axq1 = _lin_axis(tx, nn)
                    iyq, ayq0, ayq1 = _lin_axis(ty, nn)
                    izq, azq0, azq1 = _lin_axis(tz, nn)
                    bq = (ixq * nn + iyq) * nn + izq
                for c in range(C):
                    ap = 0.0
                    if in_p:
                        ap = (azp0 * (axp0 * (ayp0 * pert[bp, c] + ayp1 * pert[bp + nn, c])
                                      + axp1 * (ayp0 * pert[bp + nn * nn, c] + ayp1 * pert[bp + nn * nn + nn, c]))
                              + azp1 * (axp0 * (ayp0 * pert[bp + 1, c] + ayp1 * pert[bp + nn + 1, c])
                                        + axp1 * (ayp0 * pert[bp + nn * nn + 1, c] + ayp1 * pert[bp + nn * nn + nn + 1, c])))
                    aq = 0.0
                    if in_q:
                        aq = (azq0 * (axq0 * (ayq0 * pert[bq, c] + ayq1 * pert[bq + nn, c])
                                      + axq1 * (ayq0 * pert[bq + nn * nn, c] + ayq1 * pert[bq + nn * nn + nn, c]))
                              + azq1 * (axq0 * (ayq0 * pert[bq + 1, c] + ayq1 * pert[bq + nn + 1, c])
                                        + axq1 * (ayq0 * pert[bq + nn * nn + 1, c] + ayq1 * pert[bq + nn * nn + nn + 1, c])))
                    Fp = mup + sqWp * ap
                    F1p = mu1p + sqW1p * aq
                    Fi = mui + sqWi * prow_i[c]
                    F1 = mu1 + sqW1 * prow_j[c]
                    orow[c] += w * (Fp * F1p * (1.0 - Fi - F1)
                                    - Fi * F1 * (1.0 - Fp - F1p))


@njit(**_NOPT)
def _crc64_table():
    poly = np.uint64(0x42F0E1EBA9EA3693)
    top = np.uint64(0x8000000000000000)
    one = np.uint64(1)
    table = np.empty(256, dtype=np.uint64)
    for b in range(256):
        crc = np.uint64(b) << np.uint64(56)
        for _ in range(8):
            if crc & top:
                crc = np.uint64(crc << one) ^ poly
            else:
                crc = np.uint64(crc << one)
        table[b] = crc
    return table


@njit(**_NOPT)
def crc64(data, init):
    """CRC-64/ECMA-182 over a byte array (polynomial 0x42F0E1EBA9EA3693)."""
    table = _crc64_table()
    crc = np.uint64(init)
    s56 = np.uint64(56)
    s8 = np.uint64(8)
    mask = np.uint64(0xFF)
    for b in range(data.shape[0]):
        idx = np.uint64((crc >> s56) ^ np.uint64(data[b])) & mask
        crc = np.uint64(crc << s8) ^ table[idx]
    return crc

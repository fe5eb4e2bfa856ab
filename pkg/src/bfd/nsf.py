"""Pseudo-spectral incompressible Navier-Stokes-Fourier reference solver.

Integrates the limiting system on the periodic torus [0, 2pi)^d:

    E2 d_t u + E2 (u . grad) u + grad p = nu_star Lap u,   div u = 0,
    CA d_t theta + CA (u . grad) theta = kappa_star Lap theta,

i.e. kinematic viscosity nu_star/E2 and thermal diffusivity kappa_star/CA.
Pressure is eliminated by Leray projection; advection is 2/3-rule
dealiased; diffusion is exact per Fourier mode via an integrating
factor wrapped around three-stage strong-stability-preserving
Runge-Kutta.  Default d = 2; d = 3 works at low resolution.
"""

import numpy as np
from dataclasses import dataclass

from .cache import save_array, load_array


class NSFAbort(RuntimeError):
    """Numerical breakdown of an NSF run (NaN in the state)."""


def _wavenumbers(shape):
    return [np.fft.fftfreq(nx, 1.0 / nx) for nx in shape]


def _k_grids(shape):
    ks = _wavenumbers(shape)
    d = len(shape)
    out = []
    for ax in range(d):
        shp = [1] * d
        shp[ax] = shape[ax]
        out.append(ks[ax].reshape(shp))
    return out

def dealias_mask(shape):
    """2/3-rule mask in Fourier space."""
    kg = _k_grids(shape)
    mask = np.ones(shape, dtype=bool)
    for ax, k in enumerate(kg):
        mask &= np.abs(k) <= shape[ax] // 3
    return mask


def leray_project(u):
    """Mode-wise projection I - khat khat^T; annihilates gradients.

    u has shape spatial + (d,); the zero mode passes through unchanged.
    """
    d = u.shape[-1]
    shape = u.shape[:-1]
    kg = _k_grids(shape)
    uh = np.fft.fftn(u, axes=tuple(range(d)))
    k2 = sum(k ** 2 for k in kg)
    k2safe = np.where(k2 == 0, 1.0, k2)
    div = sum(kg[ax] * uh[..., ax] for ax in range(d))
    for ax in range(d):
        uh[..., ax] -= kg[ax] * div / k2safe
    return np.fft.ifftn(uh, axes=tuple(range(d))).real


def divergence(u):
    d = u.shape[-1]
    shape = u.shape[:-1]
    kg = _k_grids(shape)
    uh = np.fft.fftn(u, axes=tuple(range(d)))
    div = sum(1j * kg[ax] * uh[..., ax] for ax in range(d))
    return np.fft.ifftn(div, axes=tuple(range(d))).real


def grad_norm_l2(f, vector=False):
    """Discrete L2 norm of grad f on [0,2pi)^d.

    vector=True treats the last axis as components (shape spatial+(d,)).
    """
    comps = [f[..., i] for i in range(f.shape[-1])] if vector else [f]
    total = 0.0
    for c in comps:
        shape = c.shape
        d = len(shape)
        kg = _k_grids(shape)
        ch = np.fft.fftn(c)
        k2 = sum(k ** 2 for k in kg)
        nx = float(np.prod(shape))
        total += (2.0 * np.pi) ** d / nx ** 2 * np.sum(k2 * np.abs(ch) ** 2)
    return float(np.sqrt(max(total, 0.0)))


def l2_norm(f, vector=False):
    """Discrete L2 norm over [0,2pi)^d; vector=True sums last-axis parts."""
    d = f.ndim - 1 if vector else f.ndim
    nx = float(np.prod(f.shape[:d]))
    return float(np.sqrt((2.0 * np.pi) ** d / nx * np.sum(f ** 2)))


@dataclass
class NSFState:
    """Divergence-free velocity + temperature on the periodic grid."""
    u: np.ndarray          # spatial + (d,)
    theta: np.ndarray      # spatial
    t: float
    nu: float              # nu_star / E2
    kappa: float           # kappa_star / CA

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        if self.u.shape[:-1] != self.theta.shape or \
                self.u.shape[-1] != self.theta.ndim:
            raise ValueError("u must be spatial + (d,) matching theta")

    @property
    def d(self):
        return self.theta.ndim

    def copy(self):
        return NSFState(self.u.copy(), self.theta.copy(), self.t,
                        self.nu, self.kappa)

    def energy(self, E2=1.0):
        """Kinetic energy (1/2) E2 ||u||^2."""
        return 0.5 * E2 * l2_norm(self.u, vector=True) ** 2

    def dissipation(self, nu_star=None):
        """nu_star ||grad u||^2 (defaults to nu interpreted as nu_star)."""
        c = self.nu if nu_star is None else nu_star
        return c * grad_norm_l2(self.u, vector=True) ** 2


def initial_data_from_kinetic(rho0, u0, theta0, constants, nu, kappa):
    """Limit initial data: u = P u0, theta = (Kg theta0 - rho0)/(Kg+1)."""
    u = leray_project(np.asarray(u0, dtype=float))
    th = (constants.Kg * np.asarray(theta0, dtype=float)
          - np.asarray(rho0, dtype=float)) / (constants.Kg + 1.0)
    return NSFState(u, th, 0.0, nu, kappa)


def _nonlinear(uh, thh, kg, mask, d, sp_axes):
    """Dealiased Leray-projected -(u.grad)u and -(u.grad)theta (hat)."""
    uhm = uh * mask[..., None]
    thm = thh * mask
    u = np.fft.ifftn(uhm, axes=sp_axes).real
    nl_u = np.zeros_like(uh)
    nl_th = np.zeros(thh.shape, dtype=complex)
    for ax in range(d):
        dua = np.fft.ifftn(1j * kg[ax][..., None] * uhm, axes=sp_axes).real
        nl_u -= np.fft.fftn(u[..., ax, None] * dua, axes=sp_axes)
        dth = np.fft.ifftn(1j * kg[ax] * thm, axes=sp_axes).real
        nl_th -= np.fft.fftn(u[..., ax] * dth, axes=sp_axes)
    nl_u *= mask[..., None]
    nl_th *= mask
    # Leray projection of the advection term keeps u divergence-free
    k2 = sum(k ** 2 for k in kg)
    k2safe = np.where(k2 == 0, 1.0, k2)
    div = sum(kg[ax] * nl_u[..., ax] for ax in range(d))
    for ax in range(d):
        nl_u[..., ax] -= kg[ax] * div / k2safe
    return nl_u, nl_th


def nsf_step(state, dt):
    """One integrating-factor SSP-RK3 step; returns a new NSFState."""
    d = state.d
    shape = state.theta.shape
    sp_axes = tuple(range(d))
    kg = _k_grids(shape)
    mask = dealias_mask(shape)
    k2 = sum(k ** 2 for k in kg)
    Eu = np.exp(-state.nu * k2 * dt)
    Eth = np.exp(-state.kappa * k2 * dt)
    Eu2, Eth2 = np.exp(-state.nu * k2 * 0.5 * dt), \
        np.exp(-state.kappa * k2 * 0.5 * dt)

    uh = np.fft.fftn(state.u, axes=sp_axes)
    thh = np.fft.fftn(state.theta, axes=sp_axes)

    n_u, n_th = _nonlinear(uh, thh, kg, mask, d, sp_axes)
    u1 = Eu[..., None] * (uh + dt * n_u)
    th1 = Eth * (thh + dt * n_th)

    n_u, n_th = _nonlinear(u1, th1, kg, mask, d, sp_axes)
    u2 = 0.75 * Eu2[..., None] * uh \
        + 0.25 * (u1 + dt * n_u) / Eu2[..., None]
    th2 = 0.75 * Eth2 * thh + 0.25 * (th1 + dt * n_th) / Eth2

    n_u, n_th = _nonlinear(u2, th2, kg, mask, d, sp_axes)
    un = (1.0 / 3.0) * Eu[..., None] * uh \
        + (2.0 / 3.0) * Eu2[..., None] * (u2 + dt * n_u)
    thn = (1.0 / 3.0) * Eth * thh + (2.0 / 3.0) * Eth2 * (th2 + dt * n_th)

    u_new = np.fft.ifftn(un, axes=sp_axes).real
    th_new = np.fft.ifftn(thn, axes=sp_axes).real
    if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(th_new))):
        raise NSFAbort("non-finite NSF state at t=%.6g" % (state.t + dt))
    return NSFState(u_new, th_new, state.t + dt, state.nu, state.kappa)


def run_nsf(state, dt, t_end, sample_times=(), E2=1.0, nu_star=None):
    """Integrate to t_end; returns (state, samples, balance rows).

    samples maps each requested time (must be step-aligned) to a state
    copy; balance rows carry the per-step kinetic-energy balance
    residual  E(t+dt) - E(t) + dt * avg dissipation  in the units of
    the limit system ((1/2) E2 ||u||^2 against nu_star ||grad u||^2).
    """
    n = int(round(t_end / dt))
    if abs(n * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError("dt must divide t_end")
    want = {}
    for s in sample_times:
        ist = int(round(s / dt))
        if abs(ist * dt - s) > 1e-9:
            raise ValueError("sample time %g not on the step grid" % s)
        want[ist] = s
    samples, rows = {}, []
    if 0 in want:
        samples[want[0]] = state.copy()
    en = state.energy(E2)
    dis = state.dissipation(nu_star)
    for istep in range(1, n + 1):
        state = nsf_step(state, dt)
        en1 = state.energy(E2)
        dis1 = state.dissipation(nu_star)
        rows.append({"step": istep, "t": state.t,
                     "energy": en1,
                     "balance_residual": en1 - en + 0.5 * dt * (dis + dis1)})
        en, dis = en1, dis1
        if istep in want:
            samples[want[istep]] = state.copy()
    return state, samples, rows


def taylor_green(shape, t, nu, amplitude=1.0):
    """Exact 2-D solution u = a(sin x cos y, -cos x sin y) e^{-2 nu t}."""
    if len(shape) != 2:
        raise ValueError("Taylor-Green reference is 2-D")
    x = 2.0 * np.pi * np.arange(shape[0]) / shape[0]
    y = 2.0 * np.pi * np.arange(shape[1]) / shape[1]
    X, Y = np.meshgrid(x, y, indexing="ij")
    a = amplitude * np.exp(-2.0 * nu * t)
    u = np.empty(shape + (2,))
    u[..., 0] = a * np.sin(X) * np.cos(Y)
    u[..., 1] = -a * np.cos(X) * np.sin(Y)
    return u


def save_snapshot(path, state):
    """Persist a state as flat payload with CRC sidecar."""
    d = state.d
    head = [state.t, state.nu, state.kappa, float(d)] + \
        [float(s) for s in state.theta.shape]
    payload = np.concatenate([head, state.u.ravel(), state.theta.ravel()])
    crc = save_array(path, payload)
    with open(path + ".crc", "w") as f:
        f.write("%d\n" % crc)
    return crc


def load_snapshot(path):
    crc = None
    try:
        with open(path + ".crc") as f:
            crc = int(f.read().strip())
    except (OSError, ValueError):
        pass
    payload = load_array(path, expect_crc=crc)
    t, nu, kappa, d = payload[0], payload[1], payload[2], int(payload[3])
    shape = tuple(int(s) for s in payload[4:4 + d])
    off = 4 + d
    nu_sz = int(np.prod(shape)) * d
    u = payload[off:off + nu_sz].reshape(shape + (d,)).copy()
    th = payload[off + nu_sz:].reshape(shape).copy()
    return NSFState(u, th, t, nu, kappa)

"""Experiment orchestration: config ingestion, operator-cache manifest,
the epsilon-sweep comparing kinetic moments against the limiting
incompressible flow, and CSV/JSON report emission.
"""

import os
import json
import warnings

import numpy as np
from dataclasses import dataclass, field, asdict

from .velocity import build_grid, build_sphere_quadrature
from .equilibrium import moment_constants
from .collision import LinearOperatorMatrix
from .fredholm import transport_coefficients, export_transport_report, \
    export_kernel_table_csv
from .kinetic import KineticOperators, KineticState, SolverConfig, run, \
    write_diagnostics
from .macro import MacroProjector, limit_moments, fluid_variables
from . import nsf
from .cache import cache_dir as resolve_cache_dir, save_array


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


def _parse_modes(text, d):
    """Semicolon-separated mode list 'k1,...,kd,amp[,phase]' -> tuples."""
    modes = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        vals = [float(x) for x in part.split(",")]
        if len(vals) not in (d + 1, d + 2):
            raise ConfigError("mode %r needs %d wavenumbers + amplitude "
                              "[+ phase]" % (part, d))
        k = tuple(int(round(v)) for v in vals[:d])
        amp = vals[d]
        phase = vals[d + 1] if len(vals) == d + 2 else 0.0
        modes.append((k, amp, phase))
    return modes


@dataclass
class ExperimentConfig:
    """All knobs of a sweep/run, with well-prepared small-data defaults."""
    # velocity-space operators
    R: float = 8.0
    n: int = 13
    sphere_order: int = 3
    prune_tol: float = 1e-6
    # spatial discretization
    d: int = 2
    Nx: int = 32
    # time integration
    epsilons: tuple = (0.5, 0.25, 0.125, 0.0625)
    dt: float = 0.01
    t_end: float = 1.0
    sample_times: tuple = (0.25, 0.5, 1.0)
    terms: str = "full"
    correction: bool = True
    abort_growth: float = 10.0
    diag_every: int = 5
    # initial data: spatial Fourier modes (k-vector, amplitude, phase)
    theta0_modes: str = "1,0,0.02;0,1,0.012"
    rho0: str = "boussinesq"        # rho0 = -theta0, or "modes"
    rho0_modes: str = ""
    psi0_modes: str = "1,1,0.02"    # stream function for u0 (d=2)
    micro_amp: float = 0.005
    seed: int = 0
    # io
    output_dir: str = "out"
    cache_dir: str = ""             # empty -> BFD_CACHE_DIR or output/cache

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        if not eps or any(not (0.0 < e < 1.0) for e in eps):
            raise ConfigError("epsilons must lie in (0,1)")
        if any(eps[i] <= eps[i + 1] for i in range(len(eps) - 1)):
            raise ConfigError("epsilons must be strictly decreasing")
        self.epsilons = eps
        if self.d not in (1, 2):
            raise ConfigError("d must be 1 or 2")
        if self.dt <= 0 or self.t_end <= 0:
            raise ConfigError("dt and t_end must be positive")
        for s in self.sample_times:
            m = s / self.dt
            if not (0.0 < s <= self.t_end) or abs(m - round(m)) > 1e-9:
                raise ConfigError("sample time %g must be a step multiple "
                                  "within (0, t_end]" % s)

    def resolved_cache_dir(self):
        default = self.cache_dir or os.path.join(self.output_dir, "cache")
        return resolve_cache_dir(default)


_FIELD_TYPES = None


def _field_types():
    global _FIELD_TYPES
    if _FIELD_TYPES is None:
        import dataclasses
        _FIELD_TYPES = {f.name: f for f in
                        dataclasses.fields(ExperimentConfig)}
    return _FIELD_TYPES


def parse_config(path):
    """key = value text file -> ExperimentConfig; '#' starts a comment."""
    try:
        with open(path) as f:
            lines = f.readlines()
    except OSError as e:
        raise ConfigError("cannot read config %s: %s" % (path, e))
    kv = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("%s:%d: expected key = value" % (path, lineno))
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _field_types():
            raise ConfigError("%s:%d: unknown key %r" % (path, lineno, key))
        kv[key] = val
    kwargs = {}
    for key, val in kv.items():
        ftype = _field_types()[key].type
        try:
            if ftype in (float, "float"):
                kwargs[key] = float(val)
            elif ftype in (int, "int"):
                kwargs[key] = int(val)
            elif ftype in (bool, "bool"):
                if val.lower() not in ("true", "false", "0", "1"):
                    raise ValueError(val)
                kwargs[key] = val.lower() in ("true", "1")
            elif ftype in (tuple, "tuple"):
                kwargs[key] = tuple(float(x) for x in val.split(",") if
                                    x.strip())
            else:
                kwargs[key] = val
        except ValueError:
            raise ConfigError("%s: bad value %r for key %r" % (path, val,
                                                               key))
    try:
        return ExperimentConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError("%s: %s" % (path, e))


# ---------------------------------------------------------------------------
# initial data


def _spatial_axes(cfg):
    x = 2.0 * np.pi * np.arange(cfg.Nx) / cfg.Nx
    return np.meshgrid(*([x] * cfg.d), indexing="ij")


def _mode_field(modes_text, cfg):
    Xs = _spatial_axes(cfg)
    out = np.zeros((cfg.Nx,) * cfg.d)
    for k, amp, phase in _parse_modes(modes_text, cfg.d):
        arg = sum(k[ax] * Xs[ax] for ax in range(cfg.d)) + phase
        out += amp * np.cos(arg)
    return out


def initial_fields(cfg):
    """(rho0, u0, theta0) spatial fields; u0 is (Nx,)*d + (3,).

    For d = 2 the velocity comes from a stream function, so it is
    divergence-free by construction; for d = 1 the stream modes feed the
    transverse u2 component (the only divergence-free option).
    """
    theta0 = _mode_field(cfg.theta0_modes, cfg)
    if cfg.rho0 == "boussinesq":
        rho0 = -theta0
    elif cfg.rho0 == "modes":
        rho0 = _mode_field(cfg.rho0_modes, cfg)
    else:
        raise ConfigError("rho0 must be 'boussinesq' or 'modes'")
    u0 = np.zeros((cfg.Nx,) * cfg.d + (3,))
    Xs = _spatial_axes(cfg)
    for k, amp, phase in _parse_modes(cfg.psi0_modes, cfg.d):
        arg = sum(k[ax] * Xs[ax] for ax in range(cfg.d)) + phase
        if cfg.d == 2:
            # u = (d_y psi, -d_x psi) for psi = amp cos(arg)
            u0[..., 0] += -amp * k[1] * np.sin(arg)
            u0[..., 1] += amp * k[0] * np.sin(arg)
        else:
            u0[..., 1] += amp * np.cos(arg)
    return rho0, u0, theta0


def initial_kinetic_state(cfg, grid, constants):
    """Well-prepared perturbation: hydrodynamic part + microscopic seed.

    g0 = rho0 + u0 . v + theta0 (|v|^2/2 - Kg) + micro_amp * m(x) w(v)
    with w microscopic (projected off the collision invariants) and m a
    seeded random low-mode field.
    """
    rho0, u0, theta0 = initial_fields(cfg)
    c = constants
    g = (rho0[..., None]
         + np.tensordot(u0, grid.nodes.T, axes=(cfg.d, 0))
         + theta0[..., None] * (0.5 * grid.r2 - c.Kg))
    if cfg.micro_amp != 0.0:
        proj = MacroProjector(grid)
        w = proj.micro(grid.nodes[:, 0] * grid.nodes[:, 1]
                       * np.exp(-0.25 * grid.r2))
        rng = np.random.default_rng(cfg.seed)
        m = np.zeros((cfg.Nx,) * cfg.d)
        Xs = _spatial_axes(cfg)
        for _ in range(3):
            k = rng.integers(-2, 3, size=cfg.d)
            ph = rng.uniform(0.0, 2.0 * np.pi)
            arg = sum(int(k[ax]) * Xs[ax] for ax in range(cfg.d)) + ph
            m += rng.uniform(0.3, 1.0) * np.cos(arg)
        g = g + cfg.micro_amp * m[..., None] * w
    return KineticState.from_g(grid, g)


# ---------------------------------------------------------------------------
# operator cache


def build_operators(cfg, need_propagators=True, log=print):
    """KineticOperators + transport coefficients, disk-cached.

    Returns (ops, tc, table, manifest).  The manifest maps artifact
    names to paths and CRC-64 checksums; corrupted cache entries are
    rebuilt with a warning.
    """
    grid = build_grid(cfg.R, cfg.n)
    sphere = build_sphere_quadrature(cfg.sphere_order)
    cdir = cfg.resolved_cache_dir()
    ops = KineticOperators(grid, sphere, cfg.prune_tol, cache_dir=cdir)
    for kind, detail in ops.cache_events:
        if kind == "rebuild":
            warnings.warn("cache entry rebuilt: %s" % detail)
        elif log is not None:
            log("cache %s: %s" % (kind, detail))
    if need_propagators:
        for eps in cfg.epsilons:
            ops.propagator(cfg.dt, eps)
    constants = moment_constants(grid)
    L = LinearOperatorMatrix(grid, sphere, "linear", cfg.prune_tol,
                             ops.L_canonical, None, ops.nu_vals)
    tc, table, fields = transport_coefficients(L, grid, constants)
    manifest = {"params": {"R": cfg.R, "n": cfg.n,
                           "sphere_order": cfg.sphere_order,
                           "prune_tol": cfg.prune_tol, "dt": cfg.dt,
                           "epsilons": list(cfg.epsilons)},
                "entries": {}}
    A, Ap, B_off, Bp_off = fields
    os.makedirs(cdir, exist_ok=True)
    for name, fld in [("Aprime_%d" % i, f) for i, f in enumerate(Ap)] + \
                     [("Bprime_%d" % i, f) for i, f in enumerate(Bp_off)]:
        path = os.path.join(cdir, "fred_%s_R%g_n%d_s%d_p%.1e.npy"
                            % (name, cfg.R, cfg.n, cfg.sphere_order,
                               cfg.prune_tol))
        crc = save_array(path, fld.values)
        manifest["entries"][name] = {"path": path, "crc64": crc}
    for kind, detail in ops.cache_events:
        if kind in ("hit", "store"):
            name = os.path.basename(detail)
            manifest["entries"][name] = {"path": detail}
    manifest["transport"] = {"nu_star": tc.nu_star,
                             "kappa_star": tc.kappa_star,
                             "lambda": tc.lambda_coercive}
    return ops, tc, table, constants, manifest


# ---------------------------------------------------------------------------
# sweep


@dataclass
class ConvergenceReport:
    """Per-epsilon, per-sample-time limit metrics plus observed orders."""
    rows: list                    # dicts: epsilon,t,e_u,e_theta,bous,div
    orders: dict                  # t -> {metric: [log2 ratios]}
    transport: dict
    params: dict
    diagnostics: dict = field(default_factory=dict)


def _leray_wrap(d):
    """Leray projection of the first d components of a 3-vector field."""
    def proj(u3):
        out = u3.copy()
        out[..., :d] = nsf.leray_project(np.ascontiguousarray(u3[..., :d]))
        return out
    return proj


def _limit_metrics(g, grid, constants, ref_state, d):
    """e_u, e_theta, Boussinesq and incompressibility residuals."""
    leray = _leray_wrap(d)
    u_mom, th_mom = limit_moments(g, grid, constants, leray=leray)
    u_ref = np.zeros(u_mom.shape)
    u_ref[..., :d] = ref_state.u
    e_u = nsf.l2_norm(u_mom - u_ref, vector=True)
    e_th = nsf.l2_norm(th_mom - ref_state.theta)
    hv = fluid_variables(g, grid, constants)
    bous = nsf.grad_norm_l2(hv.rho + hv.theta)
    div = nsf.l2_norm(nsf.divergence(np.ascontiguousarray(hv.u[..., :d])))
    return e_u, e_th, bous, div


def run_sweep(cfg, log=print):
    """Integrate every epsilon and the limiting reference; build report."""
    ops, tc, table, constants, manifest = build_operators(cfg, log=log)
    grid = ops.grid
    rho0, u0, theta0 = initial_fields(cfg)
    nu = tc.nu_star / constants.E2
    kappa = tc.kappa_star / constants.CA
    ref0 = nsf.initial_data_from_kinetic(
        rho0, np.ascontiguousarray(u0[..., :cfg.d]), theta0, constants,
        nu, kappa)
    _, ref_samples, _ = nsf.run_nsf(ref0, cfg.dt, cfg.t_end,
                                    sample_times=cfg.sample_times)
    rows = []
    diagnostics = {}
    for eps in cfg.epsilons:
        if log is not None:
            log("running epsilon = %g" % eps)
        state = initial_kinetic_state(cfg, grid, constants)
        t_prev = 0.0
        diag_rows = []
        for ts in sorted(cfg.sample_times):
            seg = SolverConfig(eps=eps, dt=cfg.dt, t_end=ts - t_prev,
                               terms=cfg.terms, correction=cfg.correction,
                               diag_every=cfg.diag_every,
                               abort_growth=cfg.abort_growth)
            state, seg_rows = run(state, ops, seg)
            diag_rows.extend(seg_rows if not diag_rows else seg_rows[1:])
            t_prev = ts
            g = state.g_nodal()
            e_u, e_th, bous, div = _limit_metrics(
                g, grid, constants, ref_samples[ts], cfg.d)
            rows.append({"epsilon": eps, "t": ts, "e_u": e_u,
                         "e_theta": e_th, "boussinesq_res": bous,
                         "div_res": div})
        diagnostics[eps] = diag_rows
    orders = {}
    for ts in sorted(cfg.sample_times):
        sub = [r for r in rows if r["t"] == ts]
        sub.sort(key=lambda r: -r["epsilon"])
        orders[ts] = {}
        for met in ("e_u", "e_theta", "boussinesq_res", "div_res"):
            vals = [r[met] for r in sub]
            orders[ts][met] = [
                float(np.log2(vals[i] / vals[i + 1]))
                if vals[i + 1] > 0 else float("nan")
                for i in range(len(vals) - 1)]
    return ConvergenceReport(rows, orders, dict(manifest["transport"],
                                                nu_limit=nu,
                                                kappa_limit=kappa),
                             manifest["params"], diagnostics)


_SWEEP_COLUMNS = ("epsilon", "t", "e_u", "e_theta", "boussinesq_res",
                  "div_res")


def report_emit(report, outdir):
    """CSV table + JSON summary; returns their paths."""
    os.makedirs(outdir, exist_ok=True)
    csv_path = os.path.join(outdir, "sweep.csv")
    with open(csv_path, "w", newline="") as f:
        f.write(",".join(_SWEEP_COLUMNS) + "\n")
        for r in report.rows:
            f.write(",".join("%.17g" % r[c] for c in _SWEEP_COLUMNS) + "\n")
    json_path = os.path.join(outdir, "sweep.json")
    payload = {"rows": report.rows,
               "observed_orders": {"%g" % t: v
                                   for t, v in report.orders.items()},
               "transport": report.transport,
               "params": report.params}
    with open(json_path, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
        f.write("\n")
    for eps, diag in report.diagnostics.items():
        write_diagnostics(os.path.join(outdir, "diag_eps%g.csv" % eps),
                          diag)
    return csv_path, json_path


# ---------------------------------------------------------------------------
# single runs (CLI verbs)


def run_single(cfg, eps, log=print):
    """One kinetic run at the given epsilon; diagnostics CSV emitted."""
    ops, tc, table, constants, manifest = build_operators(cfg, log=log)
    state = initial_kinetic_state(cfg, ops.grid, constants)
    out = os.path.join(cfg.output_dir, "run_eps%g.csv" % eps)
    scfg = SolverConfig(eps=eps, dt=cfg.dt, t_end=cfg.t_end,
                        terms=cfg.terms, correction=cfg.correction,
                        diag_every=cfg.diag_every,
                        abort_growth=cfg.abort_growth,
                        diagnostics_path=out)
    state, rows = run(state, ops, scfg)
    return state, rows, out


def run_nsf_only(cfg, log=print):
    """Integrate just the limiting system from the mapped initial data."""
    grid = build_grid(cfg.R, cfg.n)
    constants = moment_constants(grid)
    ops, tc, table, constants, manifest = build_operators(
        cfg, need_propagators=False, log=log)
    rho0, u0, theta0 = initial_fields(cfg)
    st = nsf.initial_data_from_kinetic(
        rho0, np.ascontiguousarray(u0[..., :cfg.d]), theta0, constants,
        tc.nu_star / constants.E2, tc.kappa_star / constants.CA)
    st, samples, rows = nsf.run_nsf(st, cfg.dt, cfg.t_end,
                                    sample_times=cfg.sample_times)
    os.makedirs(cfg.output_dir, exist_ok=True)
    path = os.path.join(cfg.output_dir, "nsf_energy.csv")
    with open(path, "w", newline="") as f:
        f.write("step,t,energy,balance_residual\n")
        for r in rows:
            f.write("%d,%.17g,%.17g,%.17g\n"
                    % (r["step"], r["t"], r["energy"],
                       r["balance_residual"]))
    for ts, s in samples.items():
        nsf.save_snapshot(os.path.join(cfg.output_dir,
                                       "nsf_t%g.npy" % ts), s)
    return st, rows, path


def emit_transport(cfg, log=print):
    ops, tc, table, constants, manifest = build_operators(
        cfg, need_propagators=False, log=log)
    os.makedirs(cfg.output_dir, exist_ok=True)
    txt = os.path.join(cfg.output_dir, "transport.txt")
    js = os.path.join(cfg.output_dir, "transport.json")
    export_transport_report(txt, js, tc)
    export_kernel_table_csv(os.path.join(cfg.output_dir,
                                         "kernel_table.csv"), table)
    return tc, txt, js


def emit_manifest(cfg, log=print):
    ops, tc, table, constants, manifest = build_operators(cfg, log=log)
    os.makedirs(cfg.output_dir, exist_ok=True)
    path = os.path.join(cfg.output_dir, "cache_manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True, default=str)
        f.write("\n")
    return manifest, path

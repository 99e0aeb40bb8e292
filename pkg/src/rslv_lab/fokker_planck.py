"""P1 Galerkin solvers on a truncated domain for the nonlinear sub-density systems.

Four systems share one linearised backward-Euler stepper:

  * "fbm":  d/dt (v, p) + (v', A_eps(p+) p') = 0            (no drift, no jumps)
  * "jump": the same plus the regime-exchange term (Qv, p)
  * "rslv": d/dt (v, p) - r (v', p)
            + (v', 1/2 R_eps(p+) s (s + 2 s_x) Lam p) + (v', s^2 A_eps(p+) p') = (Qv, p)
  * "lv":   the scalar analogue of "rslv" (d = 1, A = 1/2, R = 1)

with s = sigma_tilde(t, x).  Diffusion and exchange are treated implicitly
with coefficients frozen at the current iterate; the drift terms are
explicit.  The boundary is zero-flux (natural) on [-L, L], which preserves
mass exactly; degrees of freedom interleave the regime index within each
node so every step is one banded solve.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass

import numpy as np

from .banded import solve_block_tridiag
from .dupire import VolSurface
from .regime_model import (Measure, RegimeModel, a_eps_batch, ratio_r_eps_batch)

__all__ = [
    "SpatialGrid",
    "PDSConfig",
    "Diagnostics",
    "GridSolution",
    "NumericalError",
    "mollify_initial",
    "solve_fbm",
    "solve_jump_fbm",
    "solve_rslv",
    "solve_lv",
    "l1_grid_distance",
    "write_snapshots",
]


class NumericalError(RuntimeError):
    """Linear-solve failure or NaN blow-up, annotated with the step index."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform node set on [-L, L] with m nodes and spacing h = 2L/(m-1)."""

    L: float
    m: int

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("domain half-width must be positive")
        if self.m < 3:
            raise ValueError("need at least three nodes")

    @property
    def h(self) -> float:
        return 2.0 * self.L / (self.m - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(-self.L, self.L, self.m)

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.m, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w


@dataclass(frozen=True)
class PDSConfig:
    """Regularisation, step size and output cadence for one PDS solve.

    eps_reg defaults to 1e-10 * lam_min / (2L), far below any attained
    sum(lam * p) away from the tails.  sigma_mollify is the width of the
    initial heat-kernel mollification (required positive for atomic data).
    """

    dt: float
    eps_reg: float | None = None
    sigma_mollify: float = 0.0
    scheme: str = "semi-implicit"
    mass_lumping: bool = False
    n_outputs: int = 11
    output_times: tuple | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        if self.eps_reg is not None and not self.eps_reg > 0:
            raise ValueError("regularisation must be positive")
        if self.scheme != "semi-implicit":
            raise ValueError("only the semi-implicit scheme is implemented")


@dataclass
class Diagnostics:
    """Per-output-time records plus step-level conservation summaries."""

    masses: np.ndarray          # (k, d) per-state trapezoid masses
    min_value: np.ndarray       # (k,) smallest nodal value
    l2: np.ndarray              # (k, d) per-state L2 norms
    boundary_mass: np.ndarray   # (k,) total density mass in the outermost cells
    max_mass_drift: float       # max over steps of relative total-mass drift
    max_energy_increase: float  # max over steps of the L2-energy increment
    boundary_warning: bool
    n_steps: int
    dt: float
    wall_time: float


@dataclass
class GridSolution:
    """Space-time tabulation of the sub-density vector on the grid."""

    grid: SpatialGrid
    times: np.ndarray           # (k,)
    p: np.ndarray               # (k, d, m)
    diagnostics: Diagnostics

    @property
    def d(self) -> int:
        return self.p.shape[1]

    def total_density(self, idx: int) -> np.ndarray:
        return self.p[idx].sum(axis=0)

    def at_time(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 + 1e-6 * max(1.0, abs(t)):
            raise KeyError(f"no recorded output near t={t}")
        return self.p[k]


def mollify_initial(mu, sigma: float, grid: SpatialGrid, alpha) -> np.ndarray:
    """Initial rows p0_i = alpha_i * (mu_i * h_{sigma^2}) sampled on the grid.

    ``mu`` is a single measure (shared x-law) or one measure per regime.
    Atomic measures require sigma > 0.
    """
    alpha = np.asarray(alpha, dtype=float)
    d = alpha.size
    if isinstance(mu, Measure):
        mus = [mu] * d
    else:
        mus = list(mu)
        if len(mus) != d:
            raise ValueError("need one measure per regime")
    return np.stack([alpha[i] * mus[i].density_on(grid.x, sigma) for i in range(d)])


def _default_eps(lam: np.ndarray, grid: SpatialGrid) -> float:
    return 1e-10 * float(lam.min()) / (2.0 * grid.L)


def _project_initial(mu, sigma: float, grid: SpatialGrid, alpha,
                     lumped: bool = False) -> np.ndarray:
    """Orthogonal L2 projection of the mollified initial rows onto the hat basis.

    Element-wise Gauss-Legendre quadrature of the load vector followed by one
    tridiagonal mass solve per distinct measure.  With mass lumping the
    projection degenerates to nodal sampling, so plain mollify_initial values
    are returned instead.
    """
    alpha = np.asarray(alpha, dtype=float)
    if lumped:
        return mollify_initial(mu, sigma, grid, alpha)
    d = alpha.size
    mus = [mu] * d if isinstance(mu, Measure) else list(mu)
    if len(mus) != d:
        raise ValueError("need one measure per regime")
    m, h = grid.m, grid.h
    gp, gw = np.polynomial.legendre.leggauss(5)
    tq = 0.5 * (gp + 1.0)
    wq = 0.5 * gw
    pts = grid.x[:-1, None] + h * tq[None, :]

    from scipy.linalg import solve_banded
    ab = np.zeros((3, m))
    ab[0, 1:] = h / 6.0
    ab[1, :] = 2.0 * h / 3.0
    ab[1, 0] = ab[1, -1] = h / 3.0
    ab[2, :-1] = h / 6.0

    rows = np.empty((d, m))
    cache: dict[int, np.ndarray] = {}
    for i in range(d):
        key = id(mus[i])
        if key not in cache:
            dens = mus[i].density_on(pts.ravel(), sigma).reshape(m - 1, tq.size)
            b = np.zeros(m)
            b[:-1] += h * dens @ ((1.0 - tq) * wq)
            b[1:] += h * dens @ (tq * wq)
            cache[key] = solve_banded((1, 1), ab, b)
        rows[i] = alpha[i] * cache[key]
    return rows


def _mass_apply(u: np.ndarray, h: float, lumped: bool) -> np.ndarray:
    """(W u) for the P1 mass matrix, acting nodewise on (m, d) arrays."""
    if lumped:
        out = h * u.copy()
        out[0] *= 0.5
        out[-1] *= 0.5
        return out
    out = np.empty_like(u)
    out[1:-1] = (h / 6.0) * (u[:-2] + 4.0 * u[1:-1] + u[2:])
    out[0] = (h / 6.0) * (2.0 * u[0] + u[1])
    out[-1] = (h / 6.0) * (2.0 * u[-1] + u[-2])
    return out


def _output_steps(T: float, dt: float, config: PDSConfig):
    n_steps = max(1, int(round(T / dt)))
    dt_eff = T / n_steps
    if config.output_times is not None:
        times = np.asarray(config.output_times, dtype=float)
    else:
        times = np.linspace(0.0, T, max(2, config.n_outputs))
    steps = np.unique(np.clip(np.round(times / dt_eff).astype(int), 0, n_steps))
    return n_steps, dt_eff, set(int(s) for s in steps)


def _advance(lam: np.ndarray, p0: np.ndarray, grid: SpatialGrid,
             horizon, config: PDSConfig, system: str,
             surface: VolSurface | None = None, q_table=None) -> GridSolution:
    d = lam.size
    m, h = grid.m, grid.h
    x_mid = 0.5 * (grid.x[:-1] + grid.x[1:])
    eps = config.eps_reg if config.eps_reg is not None else _default_eps(lam, grid)
    n_steps, dt, out_steps = _output_steps(horizon.T, config.dt, config)
    lumped = config.mass_lumping
    with_drift = system in ("rslv", "lv")
    r = horizon.r if with_drift else 0.0
    eye = np.eye(d)

    U = np.ascontiguousarray(p0.T, dtype=float)          # (m, d)
    if U.shape != (m, d):
        raise ValueError("initial data must have shape (d, m)")

    # static mass blocks
    if lumped:
        mass_diag = np.full(m, h)
        mass_diag[0] = mass_diag[-1] = 0.5 * h
        mass_off = 0.0
    else:
        mass_diag = np.full(m, 2.0 * h / 3.0)
        mass_diag[0] = mass_diag[-1] = h / 3.0
        mass_off = h / 6.0

    # exchange coupling, transposed so rows act on the test-function regime
    if q_table is not None:
        if q_table.is_constant:
            c_mid = np.broadcast_to(q_table.value(0.0).T, (m - 1, d, d))
            c_node = np.broadcast_to(q_table.value(0.0).T, (m, d, d))
        else:
            c_mid = np.stack([q_table.value(v).T for v in x_mid])
            c_node = np.stack([q_table.value(v).T for v in grid.x])
    else:
        c_mid = c_node = None

    tw = grid.trapezoid_weights()
    records, rec_times = [], []
    masses, minvals, l2s, bmasses = [], [], [], []
    max_drift = 0.0
    max_energy_inc = -math.inf
    boundary_warning = False

    def record(t):
        rec_times.append(t)
        records.append(U.T.copy())
        masses.append(tw @ U)
        minvals.append(float(U.min()))
        wu = _mass_apply(U, h, lumped)
        l2s.append(np.sqrt(np.maximum(np.einsum("md,md->d", U, wu), 0.0)))
        u_tot = U.sum(axis=1)
        bmasses.append(0.5 * h * (u_tot[0] + u_tot[1] + u_tot[-2] + u_tot[-1]))

    record(0.0)
    wall = time.perf_counter()
    total_mass = float((tw @ U).sum())
    energy = float(np.einsum("md,md->", U, _mass_apply(U, h, lumped)))

    for step in range(n_steps):
        t_n = step * dt
        pm = 0.5 * (U[:-1] + U[1:])                      # (m-1, d)
        a_e = a_eps_batch(pm, lam, eps)
        if with_drift:
            s_e = np.asarray(surface.sigma(t_n, x_mid), dtype=float)
            coef = (s_e * s_e)[:, None, None] * a_e
        else:
            coef = a_e

        diag = mass_diag[:, None, None] * eye[None, :, :]
        diag[:-1] += (dt / h) * coef
        diag[1:] += (dt / h) * coef
        off = mass_off * eye[None, :, :] - (dt / h) * coef

        if c_mid is not None:
            if lumped:
                lump = mass_diag[:, None, None]
                diag -= dt * lump * c_node
            else:
                diag[:-1] -= dt * (h / 3.0) * c_mid
                diag[1:] -= dt * (h / 3.0) * c_mid
                off -= dt * (h / 6.0) * c_mid

        rhs = _mass_apply(U, h, lumped)
        if with_drift:
            ds_e = np.asarray(surface.dsigma_dx(t_n, x_mid), dtype=float)
            r_e = ratio_r_eps_batch(pm, lam, eps)
            c_lev = 0.5 * r_e * s_e * (s_e + 2.0 * ds_e)            # (m-1,)
            b_e = r - c_lev[:, None] * lam[None, :]                 # (m-1, d)
            flux = b_e * pm
            rhs[:-1] -= dt * flux
            rhs[1:] += dt * flux

        try:
            U = solve_block_tridiag(diag, off, off, rhs)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"banded solve failed: {exc}", step + 1) from exc
        if not np.all(np.isfinite(U)):
            raise NumericalError("solution is no longer finite", step + 1)

        new_mass = float((tw @ U).sum())
        max_drift = max(max_drift, abs(new_mass - total_mass) / max(abs(total_mass), 1e-300))
        total_mass = new_mass
        new_energy = float(np.einsum("md,md->", U, _mass_apply(U, h, lumped)))
        max_energy_inc = max(max_energy_inc, new_energy - energy)
        energy = new_energy

        if (step + 1) in out_steps:
            record((step + 1) * dt)

    bm = np.asarray(bmasses)
    boundary_warning = bool(np.any(bm > 1e-4))
    diagnostics = Diagnostics(
        masses=np.asarray(masses),
        min_value=np.asarray(minvals),
        l2=np.asarray(l2s),
        boundary_mass=bm,
        max_mass_drift=max_drift,
        max_energy_increase=max_energy_inc,
        boundary_warning=boundary_warning,
        n_steps=n_steps,
        dt=dt,
        wall_time=time.perf_counter() - wall,
    )
    return GridSolution(grid=grid, times=np.asarray(rec_times),
                        p=np.asarray(records), diagnostics=diagnostics)


def solve_fbm(model: RegimeModel, config: PDSConfig, grid: SpatialGrid,
              horizon, initial: Measure) -> GridSolution:
    """Driftless sub-density system for a constant-in-time regime variable."""
    if model.q is not None:
        raise ValueError("the driftless system has no jumps; use solve_jump_fbm")
    p0 = _project_initial(initial, config.sigma_mollify, grid, model.alpha,
                          lumped=config.mass_lumping)
    return _advance(model.lam, p0, grid, horizon, config, system="fbm")


def solve_jump_fbm(model: RegimeModel, config: PDSConfig, grid: SpatialGrid,
                   horizon, initial) -> GridSolution:
    """Driftless system with regime exchange: adds (Qv, p) to the weak form."""
    if model.q is None:
        raise ValueError("jump system needs an intensity table")
    p0 = _project_initial(initial, config.sigma_mollify, grid, model.alpha,
                          lumped=config.mass_lumping)
    return _advance(model.lam, p0, grid, horizon, config, system="jump",
                    q_table=model.q)


def solve_rslv(model: RegimeModel, config: PDSConfig, grid: SpatialGrid,
               horizon, surface: VolSurface, initial) -> GridSolution:
    """Full system with rate drift, leverage drift, scaled diffusion and jumps."""
    p0 = _project_initial(initial, config.sigma_mollify, grid, model.alpha,
                          lumped=config.mass_lumping)
    return _advance(model.lam, p0, grid, horizon, config, system="rslv",
                    surface=surface, q_table=model.q)


def solve_lv(config: PDSConfig, grid: SpatialGrid, horizon,
             surface: VolSurface, initial) -> GridSolution:
    """Scalar local-volatility equation (the d = 1 reduction of the full system)."""
    p0 = _project_initial(initial, config.sigma_mollify, grid, np.array([1.0]),
                          lumped=config.mass_lumping)
    return _advance(np.array([1.0]), p0, grid, horizon, config, system="lv",
                    surface=surface)


def l1_grid_distance(grid: SpatialGrid, f, g) -> float:
    """Trapezoid L1 distance between two nodal functions on the grid."""
    return float(np.trapezoid(np.abs(np.asarray(f) - np.asarray(g)), grid.x))


def write_snapshots(sol: GridSolution, out_dir, reference=None, prefix="snapshot") -> dict:
    """CSV per output time (columns x, p_1..p_d, sum, heat_ref) plus metadata.

    ``reference`` is an optional callable (t, x_array) -> density used to
    fill the heat_ref column; it defaults to zeros.
    """
    os.makedirs(out_dir, exist_ok=True)
    files = []
    d = sol.d
    header = "x," + ",".join(f"p_{i+1}" for i in range(d)) + ",sum,heat_ref"
    for k, t in enumerate(sol.times):
        ref = (reference(float(t), sol.grid.x) if reference is not None
               else np.zeros(sol.grid.m))
        cols = [sol.grid.x] + [sol.p[k, i] for i in range(d)] + \
               [sol.total_density(k), np.asarray(ref, dtype=float)]
        name = f"{prefix}_{k:04d}.csv"
        path = os.path.join(out_dir, name)
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for row in zip(*cols):
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        files.append({"time": float(t), "file": name})
    diag = sol.diagnostics
    meta = {
        "grid": {"L": sol.grid.L, "m": sol.grid.m, "h": sol.grid.h},
        "times": [float(t) for t in sol.times],
        "snapshots": files,
        "diagnostics": {
            "masses": diag.masses.tolist(),
            "min_value": diag.min_value.tolist(),
            "l2": diag.l2.tolist(),
            "boundary_mass": diag.boundary_mass.tolist(),
            "max_mass_drift": diag.max_mass_drift,
            "max_energy_increase": diag.max_energy_increase,
            "boundary_warning": diag.boundary_warning,
            "n_steps": diag.n_steps,
            "dt": diag.dt,
            "wall_time": diag.wall_time,
        },
    }
    with open(os.path.join(out_dir, f"{prefix}_metadata.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
    return meta

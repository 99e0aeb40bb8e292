"""Interacting-particle simulator with kernel-estimated conditional expectation.

The diffusion of every particle is normalised by a Nadaraya-Watson estimate
of E[f^2(Y) | X] built from the whole ensemble, so the system is a particle
discretisation of a McKean-type SDE.  Three dynamics share the stepper:

  * "fake_bm":  dX = sqrt(lam_Y / Ehat) dW, Y drawn once from alpha
  * "jump_fbm": the same diffusion, Y switching with intensities q_ij(X)
  * "rslv":     dX = (r - lam_Y/Ehat * s^2 / 2) dt + sqrt(lam_Y/Ehat) s dW,
                s = sigma_tilde(t, X), with the same regime switching

Per-path quadratic variation accumulates the Riemann sum of the squared
diffusion coefficient.  Randomness comes from three counter-based streams
(initials, Gaussian increments, regime thinning) spawned from one seed, so
trajectories are bit-identical across runs and across dynamics that share
the Gaussian stream (e.g. jump_fbm with q = 0 reproduces fake_bm paths).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dupire import VolSurface
from .regime_model import Measure, RegimeModel

__all__ = [
    "SimPlan",
    "ParticleEnsemble",
    "Regression",
    "SimResult",
    "cond_expect_f2",
    "init_ensemble",
    "step",
    "simulate",
    "price_calls",
]

_MODES = ("fake_bm", "rslv", "jump_fbm")


@dataclass(frozen=True)
class SimPlan:
    """Step size, kernel-regression parameters and output cadence."""

    dt: float
    n_particles: int
    mode: str = "fake_bm"
    bandwidth_c: float = 1.06
    regression_grid: int = 400
    checkpoints: tuple = (1.0,)
    seed: int = 0

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}")
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        if self.n_particles < 100:
            raise ValueError("need at least 100 particles")
        if self.regression_grid < 2:
            raise ValueError("regression grid needs at least two nodes")

    @property
    def uses_jumps(self) -> bool:
        return self.mode in ("rslv", "jump_fbm")

    def validate(self, model: RegimeModel) -> None:
        """Thinning validity: at most one switch per particle per step."""
        if self.uses_jumps and model.q is not None:
            if self.dt * (model.d - 1) * model.qbar >= 1.0:
                raise ValueError(
                    "dt * (d - 1) * qbar must be < 1 for one-switch thinning")
        if self.mode == "jump_fbm" and model.q is None:
            raise ValueError("jump dynamics need an intensity table")


@dataclass
class ParticleEnsemble:
    """N particles (X, Y) with accumulated quadratic variation.

    Y is 1-based (values in 1..d).  The RNG streams ride along so that
    repeated stepping stays deterministic for a given seed.
    """

    X: np.ndarray
    Y: np.ndarray
    qv: np.ndarray
    seed: int
    t: float = 0.0
    _gauss: np.random.Generator | None = field(default=None, repr=False)
    _jump: np.random.Generator | None = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return self.X.size


@dataclass(frozen=True)
class Regression:
    """Piecewise-linear conditional-expectation estimate on a fixed grid."""

    grid: np.ndarray
    values: np.ndarray

    def __call__(self, x) -> np.ndarray:
        return np.interp(x, self.grid, self.values)


def _make_rngs(seed: int):
    init_ss, gauss_ss, jump_ss = np.random.SeedSequence(seed).spawn(3)
    return (np.random.Generator(np.random.Philox(init_ss)),
            np.random.Generator(np.random.Philox(gauss_ss)),
            np.random.Generator(np.random.Philox(jump_ss)))


def init_ensemble(model: RegimeModel, plan: SimPlan,
                  initial: Measure | None = None) -> ParticleEnsemble:
    """Draw (X_0, Y_0) with X ~ initial (default point mass at 0), Y ~ alpha."""
    initial = initial if initial is not None else Measure.point(0.0)
    init_rng, gauss_rng, jump_rng = _make_rngs(plan.seed)
    y = init_rng.choice(model.d, size=plan.n_particles, p=model.alpha) + 1
    x = initial.sample(plan.n_particles, init_rng)
    return ParticleEnsemble(X=np.asarray(x, dtype=float), Y=y.astype(np.int64),
                            qv=np.zeros(plan.n_particles), seed=plan.seed,
                            t=0.0, _gauss=gauss_rng, _jump=jump_rng)


def cond_expect_f2(ensemble: ParticleEnsemble, plan: SimPlan,
                   model: RegimeModel) -> Regression:
    """Nadaraya-Watson estimate of x -> E[f^2(Y) | X = x], clamped to [lmin, lmax].

    Gaussian kernel with Silverman-style bandwidth c * std(X) * N^(-1/5);
    kernel sums are accumulated by linear binning onto the regression grid
    (grid spans the sample range +/- 4 bandwidths).  Nodes with vanishing
    kernel mass take the ensemble mean of f^2(Y).
    """
    if ensemble.N < 100:
        raise ValueError("need at least 100 particles for the kernel estimate")
    x = ensemble.X
    lam_y = model.lam[ensemble.Y - 1]
    mean_lam = float(lam_y.mean())
    sd = float(x.std())
    G = plan.regression_grid
    if sd < 1e-12:
        grid = np.array([x[0] - 1.0, x[0] + 1.0])
        return Regression(grid=grid, values=np.full(2, _clamp(mean_lam, model)))
    delta = plan.bandwidth_c * sd * ensemble.N ** (-0.2)
    lo = float(x.min()) - 4.0 * delta
    hi = float(x.max()) + 4.0 * delta
    grid = np.linspace(lo, hi, G)
    step_w = (hi - lo) / (G - 1)

    pos = (x - lo) / step_w
    i0 = np.floor(pos).astype(np.int64)
    w1 = pos - i0
    den = (np.bincount(i0, weights=1.0 - w1, minlength=G)
           + np.bincount(i0 + 1, weights=w1, minlength=G))
    num = (np.bincount(i0, weights=(1.0 - w1) * lam_y, minlength=G)
           + np.bincount(i0 + 1, weights=w1 * lam_y, minlength=G))

    radius = max(1, int(math.ceil(6.0 * delta / step_w)))
    u = np.arange(-radius, radius + 1) * (step_w / delta)
    kern = np.exp(-0.5 * u * u)
    den_s = np.convolve(den, kern, mode="same")
    num_s = np.convolve(num, kern, mode="same")
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.where(den_s < 1e-300, mean_lam, num_s / np.maximum(den_s, 1e-300))
    vals = np.clip(vals, model.lam_min, model.lam_max)
    return Regression(grid=grid, values=vals)


def _clamp(v: float, model: RegimeModel) -> float:
    return min(max(v, model.lam_min), model.lam_max)


def _thinning(x, y, model, dt, rng) -> np.ndarray:
    """One-switch-per-step regime update; returns the new 1-based Y."""
    rates = model.q.rates_from(y - 1, x)
    rates = rates.copy()
    rates[np.arange(y.size), y - 1] = 0.0
    cum = np.cumsum(rates * dt, axis=1)
    u = rng.random(y.size)
    switch = u < cum[:, -1]
    if np.any(switch):
        target = np.argmax(u[:, None] < cum, axis=1) + 1
        y = y.copy()
        y[switch] = target[switch]
    return y


def step(ensemble: ParticleEnsemble, plan: SimPlan, model: RegimeModel,
         surface: VolSurface | None = None, r: float = 0.0) -> ParticleEnsemble:
    """One Euler-Maruyama step with the conditional expectation frozen at the
    current ensemble; returns the advanced ensemble."""
    plan.validate(model)
    if plan.mode == "rslv" and surface is None:
        raise ValueError("rslv dynamics need a volatility surface")
    if ensemble._gauss is None or ensemble._jump is None:
        raise ValueError("ensemble was not created by init_ensemble")
    x = ensemble.X.copy()
    y = ensemble.Y.copy()
    qv = ensemble.qv.copy()
    _advance_one(x, y, qv, ensemble.t, model, plan, surface, r,
                 ensemble._gauss, ensemble._jump)
    return ParticleEnsemble(X=x, Y=y, qv=qv, seed=ensemble.seed,
                            t=ensemble.t + plan.dt,
                            _gauss=ensemble._gauss, _jump=ensemble._jump)


def _advance_one(x, y, qv, t, model, plan, surface, r, gauss_rng, jump_rng) -> float:
    step_idx = int(round(t / plan.dt)) + 1
    ens = ParticleEnsemble(X=x, Y=y, qv=qv, seed=plan.seed, t=t)
    reg = cond_expect_f2(ens, plan, model)
    lam_y = model.lam[y - 1]
    ehat = np.clip(reg(x), model.lam_min, model.lam_max)
    ratio = lam_y / ehat
    if plan.mode == "rslv":
        s = np.asarray(surface.sigma(t, x), dtype=float)
        diff2 = ratio * s * s
        drift = r - 0.5 * diff2
    else:
        diff2 = ratio
        drift = None
    dw = gauss_rng.normal(size=x.size) * math.sqrt(plan.dt)
    if drift is not None:
        x += drift * plan.dt
    x += np.sqrt(diff2) * dw
    qv += diff2 * plan.dt
    if plan.uses_jumps and model.q is not None:
        y[:] = _thinning(x, y, model, plan.dt, jump_rng)
    if not np.all(np.isfinite(x)):
        raise RuntimeError(
            f"particle positions are no longer finite (step {step_idx})")
    return float(ratio.mean())


@dataclass
class SimResult:
    """Checkpoint samples plus per-step self-consistency diagnostics."""

    times: np.ndarray            # (k,)
    X: np.ndarray                # (k, N)
    Y: np.ndarray                # (k, N)
    qv: np.ndarray               # (k, N)
    gyongy_ratio: np.ndarray     # (n_steps,) ensemble mean of lam_Y / Ehat
    occupancy: np.ndarray        # (k, d) regime fractions at checkpoints
    seed: int

    def at_time(self, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 + 1e-6 * max(1.0, abs(t)):
            raise KeyError(f"no checkpoint near t={t}")
        return self.X[k], self.Y[k], self.qv[k]


def simulate(model: RegimeModel, plan: SimPlan, horizon,
             initial: Measure | None = None,
             surface: VolSurface | None = None) -> SimResult:
    """Run the particle system to the horizon, recording the checkpoints.

    Deterministic for a given (seed, plan, model): identical inputs give
    bit-identical trajectories.
    """
    plan.validate(model)
    if plan.mode == "rslv" and surface is None:
        raise ValueError("rslv dynamics need a volatility surface")
    T = horizon.T
    r = getattr(horizon, "r", 0.0)
    n_steps = max(1, int(round(T / plan.dt)))
    dt_plan = SimPlan(dt=T / n_steps, n_particles=plan.n_particles,
                      mode=plan.mode, bandwidth_c=plan.bandwidth_c,
                      regression_grid=plan.regression_grid,
                      checkpoints=plan.checkpoints, seed=plan.seed)
    ens = init_ensemble(model, dt_plan, initial)
    x, y, qv = ens.X, ens.Y, ens.qv
    check_steps = {}
    for tc in dt_plan.checkpoints:
        k = int(round(float(tc) / dt_plan.dt))
        if not 0 <= k <= n_steps:
            raise ValueError(f"checkpoint {tc} outside the horizon")
        check_steps.setdefault(k, float(tc))

    times, xs, ys, qvs, occ = [], [], [], [], []
    ratios = np.empty(n_steps)

    def record(step_idx):
        if step_idx in check_steps:
            times.append(check_steps[step_idx])
            xs.append(x.copy())
            ys.append(y.copy())
            qvs.append(qv.copy())
            occ.append(np.bincount(y - 1, minlength=model.d) / y.size)

    record(0)
    for n in range(n_steps):
        ratios[n] = _advance_one(x, y, qv, n * dt_plan.dt, model, dt_plan,
                                 surface, r, ens._gauss, ens._jump)
        record(n + 1)

    return SimResult(times=np.asarray(times), X=np.asarray(xs),
                     Y=np.asarray(ys), qv=np.asarray(qvs),
                     gyongy_ratio=ratios, occupancy=np.asarray(occ),
                     seed=plan.seed)


def price_calls(ensemble_or_x, strikes, r: float, T: float | None = None):
    """Discounted call prices and standard errors from terminal samples.

    Accepts a ParticleEnsemble (using its clock for discounting) or a raw
    array of terminal log-prices together with T.  Returns a list of
    (strike, price, stderr) triples.
    """
    if isinstance(ensemble_or_x, ParticleEnsemble):
        x = ensemble_or_x.X
        t = ensemble_or_x.t if T is None else T
    else:
        x = np.asarray(ensemble_or_x, dtype=float)
        if T is None:
            raise ValueError("need the maturity T for discounting")
        t = T
    disc = math.exp(-r * t)
    s = np.exp(x)
    out = []
    for k in np.atleast_1d(np.asarray(strikes, dtype=float)):
        payoff = np.maximum(s - k, 0.0)
        se = payoff.std(ddof=1) / math.sqrt(payoff.size) if payoff.size > 1 else 0.0
        out.append((float(k), disc * float(payoff.mean()), disc * float(se)))
    return out

"""Regime-model domain types and the coefficient fields shared by all solvers.

A model couples a scalar diffusion to a latent regime index in {1, ..., d}
with per-regime variance levels lam[i].  The matrix fields M, A and their
regularised variants M_eps, A_eps drive both the nonlinear Fokker-Planck
systems and the coercivity analysis; the scalar ratios R, R_eps enter the
drift of the local-volatility system.  All operations here are pure
functions of their inputs and safe to call concurrently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RegimeModel",
    "IntensityTable",
    "StateVector",
    "HorizonConfig",
    "Measure",
    "coeff_matrix_m",
    "coeff_matrix_a",
    "coeff_matrix_m_eps",
    "coeff_matrix_a_eps",
    "a_eps_batch",
    "ratio_r",
    "ratio_r_eps",
    "ratio_r_eps_batch",
    "heat_kernel",
    "heat_kernel_convolve",
]

_ALPHA_TOL = 1e-12


@dataclass(frozen=True)
class IntensityTable:
    """Jump intensities q_ij(x), either constant or piecewise linear in x.

    ``rates`` is a (d, d) matrix of constant rates, or a (k, d, d) array of
    matrices tabulated at the strictly increasing nodes ``x`` (piecewise
    linear in between, constant outside).  Off-diagonal entries must be
    non-negative; the diagonal is recomputed as q_ii = -sum_{j != i} q_ij.
    """

    rates: np.ndarray
    x: np.ndarray | None = None

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float)
        if self.x is None:
            if rates.ndim != 2 or rates.shape[0] != rates.shape[1]:
                raise ValueError("constant intensity table must be a square matrix")
            stack = rates[None, :, :]
        else:
            x = np.asarray(self.x, dtype=float)
            if x.ndim != 1 or x.size < 2 or np.any(np.diff(x) <= 0):
                raise ValueError("tabulation nodes must be strictly increasing")
            if rates.ndim != 3 or rates.shape[0] != x.size or rates.shape[1] != rates.shape[2]:
                raise ValueError("tabulated rates must have shape (len(x), d, d)")
            object.__setattr__(self, "x", x)
            stack = rates
        d = stack.shape[1]
        off = ~np.eye(d, dtype=bool)
        if np.any(stack[:, off] < 0):
            raise ValueError("off-diagonal intensities must be non-negative")
        stack = stack.copy()
        for k in range(stack.shape[0]):
            np.fill_diagonal(stack[k], 0.0)
            np.fill_diagonal(stack[k], -stack[k].sum(axis=1))
        object.__setattr__(self, "rates", stack[0] if self.x is None else stack)

    @property
    def d(self) -> int:
        return self.rates.shape[-1]

    @property
    def qbar(self) -> float:
        """Uniform bound on |q_ij| over the table."""
        return float(np.max(np.abs(self.rates)))

    @property
    def is_constant(self) -> bool:
        return self.x is None

    def value(self, x: float) -> np.ndarray:
        """The d x d matrix Q(x)."""
        if self.x is None:
            return self.rates
        xc = float(np.clip(x, self.x[0], self.x[-1]))
        out = np.empty((self.d, self.d))
        for i in range(self.d):
            for j in range(self.d):
                out[i, j] = np.interp(xc, self.x, self.rates[:, i, j])
        return out

    def rates_from(self, y_idx: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Outgoing rate rows q_{y, .}(x) for 0-based regime indices y."""
        if self.x is None:
            return self.rates[y_idx]
        out = np.empty((x.size, self.d))
        for i in range(self.d):
            rows = y_idx == i
            if not np.any(rows):
                continue
            xi = np.clip(x[rows], self.x[0], self.x[-1])
            for j in range(self.d):
                out[rows, j] = np.interp(xi, self.x, self.rates[:, i, j])
        return out

    def to_dict(self):
        if self.x is None:
            return self.rates.tolist()
        return {"x": self.x.tolist(), "rates": self.rates.tolist()}

    @classmethod
    def from_dict(cls, data) -> "IntensityTable":
        if isinstance(data, dict):
            return cls(rates=np.asarray(data["rates"], dtype=float),
                       x=np.asarray(data["x"], dtype=float))
        return cls(rates=np.asarray(data, dtype=float))


@dataclass(frozen=True)
class RegimeModel:
    """Number of regimes d, variance levels lam_i > 0, initial weights alpha_i."""

    lam: np.ndarray
    alpha: np.ndarray
    q: IntensityTable | None = None

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        alpha = np.asarray(self.alpha, dtype=float)
        if lam.ndim != 1 or lam.size < 2:
            raise ValueError("need at least two regimes")
        if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
            raise ValueError("variance levels must be positive and finite")
        if alpha.shape != lam.shape or np.any(alpha < 0):
            raise ValueError("alpha must be non-negative with one entry per regime")
        if abs(alpha.sum() - 1.0) > _ALPHA_TOL:
            raise ValueError("alpha must sum to 1 within 1e-12")
        if self.q is not None and self.q.d != lam.size:
            raise ValueError("intensity table dimension does not match lam")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "alpha", alpha)

    @property
    def d(self) -> int:
        return self.lam.size

    @property
    def lam_min(self) -> float:
        return float(self.lam.min())

    @property
    def lam_max(self) -> float:
        return float(self.lam.max())

    @property
    def qbar(self) -> float:
        return 0.0 if self.q is None else self.q.qbar

    def to_dict(self):
        out = {"lambda": self.lam.tolist(), "alpha": self.alpha.tolist()}
        if self.q is not None:
            out["q"] = self.q.to_dict()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "RegimeModel":
        q = data.get("q")
        return cls(
            lam=np.asarray(data["lambda"], dtype=float),
            alpha=np.asarray(data["alpha"], dtype=float),
            q=None if q is None else IntensityTable.from_dict(q),
        )

    @classmethod
    def from_json(cls, text: str) -> "RegimeModel":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class StateVector:
    """A point rho of the sub-density domain D = (R+)^d \\ {0}."""

    rho: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float)
        require_in_domain(rho)
        object.__setattr__(self, "rho", rho)


@dataclass(frozen=True)
class HorizonConfig:
    """Finite time horizon T > 0 and constant risk-free rate r."""

    T: float
    r: float = 0.0

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("time horizon must be positive")


def require_in_domain(rho: np.ndarray) -> None:
    if rho.ndim != 1 or not np.all(np.isfinite(rho)):
        raise ValueError("state vector must be a finite 1-d array")
    if np.any(rho < 0) or not np.any(rho > 0):
        raise ValueError("state vector must be non-negative and not identically zero")


def _m_eps_batch(rho: np.ndarray, lam: np.ndarray, eps: float) -> np.ndarray:
    """M_eps at a batch of non-negative states, shape (n, d) -> (n, d, d).

    Entries (with s = sum_l lam_l rho_l, t = sum_l rho_l, u_i = lam_i rho_i):
        M_ij = u_i * c_j / (eps^2 v s^2),   c_j = (s - u_j) - lam_j (t - rho_j)
        M_ii = (s - u_i) * (-c_i) / (eps^2 v s^2)
    Column sums vanish identically and M is homogeneous of degree 0 in rho.
    """
    rho = np.asarray(rho, dtype=float)
    u = lam[None, :] * rho
    s = u.sum(axis=1)
    t = rho.sum(axis=1)
    denom = np.maximum(eps * eps, s * s)
    c = (s[:, None] - u) - lam[None, :] * (t[:, None] - rho)
    m = u[:, :, None] * (c[:, None, :] / denom[:, None, None])
    d = lam.size
    idx = np.arange(d)
    m[:, idx, idx] = (s[:, None] - u) * (-c) / denom[:, None]
    return m


def a_eps_batch(rho: np.ndarray, lam: np.ndarray, eps: float) -> np.ndarray:
    """A_eps = (I + M_eps)/2 at a batch of states; negatives are clamped to 0."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    rho = np.maximum(np.asarray(rho, dtype=float), 0.0)
    m = _m_eps_batch(rho, np.asarray(lam, dtype=float), eps)
    d = lam.size
    idx = np.arange(d)
    m *= 0.5
    m[:, idx, idx] += 0.5
    return m


def coeff_matrix_m(rho, model: RegimeModel) -> np.ndarray:
    """The matrix M(rho) of the unregularised diffusion field; rho must lie in D."""
    rho = np.asarray(rho, dtype=float)
    require_in_domain(rho)
    return _m_eps_batch(rho[None, :], model.lam, 0.0)[0]


def coeff_matrix_a(rho, model: RegimeModel) -> np.ndarray:
    """A(rho) = (I_d + M(rho))/2 on the domain D."""
    return 0.5 * (np.eye(model.d) + coeff_matrix_m(rho, model))


def coeff_matrix_m_eps(rho_plus, model: RegimeModel, eps: float) -> np.ndarray:
    """M_eps(rho) with denominators eps^2 v (sum lam rho)^2, defined on (R+)^d."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    rho = np.maximum(np.asarray(rho_plus, dtype=float), 0.0)
    if rho.ndim != 1 or rho.size != model.d:
        raise ValueError("state must be a 1-d array of length d")
    return _m_eps_batch(rho[None, :], model.lam, eps)[0]


def coeff_matrix_a_eps(rho_plus, model: RegimeModel, eps: float) -> np.ndarray:
    """A_eps = (I_d + M_eps)/2, equal to A when eps <= sum lam rho and to I/2 at 0."""
    return 0.5 * (np.eye(model.d) + coeff_matrix_m_eps(rho_plus, model, eps))


def ratio_r(rho, model: RegimeModel) -> float:
    """R(rho) = sum rho / sum lam rho on D; bounded by 1/lam_min."""
    rho = np.asarray(rho, dtype=float)
    require_in_domain(rho)
    return float(rho.sum() / (model.lam * rho).sum())


def ratio_r_eps(rho_plus, model: RegimeModel, eps: float) -> float:
    """R_eps(rho) = sum rho / (eps v sum lam rho), defined on all of (R+)^d."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    rho = np.maximum(np.asarray(rho_plus, dtype=float), 0.0)
    return float(rho.sum() / max(eps, (model.lam * rho).sum()))


def ratio_r_eps_batch(rho: np.ndarray, lam: np.ndarray, eps: float) -> np.ndarray:
    """Vectorised R_eps over rows of a (n, d) batch."""
    rho = np.maximum(np.asarray(rho, dtype=float), 0.0)
    return rho.sum(axis=1) / np.maximum(eps, rho @ lam)


def heat_kernel(t: float, x: np.ndarray) -> np.ndarray:
    """Gaussian heat kernel h_t(x) = exp(-x^2 / 2t) / sqrt(2 pi t)."""
    if t <= 0:
        raise ValueError("heat kernel time must be positive")
    x = np.asarray(x, dtype=float)
    return np.exp(-x * x / (2.0 * t)) / np.sqrt(2.0 * np.pi * t)


@dataclass(frozen=True)
class Measure:
    """Initial-law descriptor: point mass, mixture of point masses, or tabulated density.

    Richer measures are expected to be mollified first (heat-kernel convolution),
    which lands them in the tabulated case.
    """

    kind: str
    xs: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        xs = np.atleast_1d(np.asarray(self.xs, dtype=float))
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if self.kind not in ("point", "mixture", "tabulated"):
            raise ValueError(f"unknown measure kind {self.kind!r}")
        if xs.shape != w.shape or xs.ndim != 1:
            raise ValueError("xs and weights must be 1-d arrays of equal length")
        if self.kind == "point" and xs.size != 1:
            raise ValueError("a point mass has a single location")
        if self.kind == "tabulated":
            if xs.size < 2 or np.any(np.diff(xs) <= 0):
                raise ValueError("tabulation nodes must be strictly increasing")
            if np.any(w < 0):
                raise ValueError("tabulated density must be non-negative")
        elif np.any(w < 0):
            raise ValueError("atom masses must be non-negative")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "weights", w)

    @classmethod
    def point(cls, x: float, mass: float = 1.0) -> "Measure":
        return cls("point", np.array([x]), np.array([mass]))

    @classmethod
    def mixture(cls, xs, weights) -> "Measure":
        return cls("mixture", np.asarray(xs, dtype=float), np.asarray(weights, dtype=float))

    @classmethod
    def tabulated(cls, x, density) -> "Measure":
        return cls("tabulated", np.asarray(x, dtype=float), np.asarray(density, dtype=float))

    @property
    def has_atoms(self) -> bool:
        return self.kind in ("point", "mixture")

    def total_mass(self) -> float:
        if self.has_atoms:
            return float(self.weights.sum())
        return float(np.trapezoid(self.weights, self.xs))

    def convolve_heat(self, t: float, x_grid: np.ndarray) -> np.ndarray:
        """Density of mu * h_t on the grid (trapezoid quadrature for tabulated mu)."""
        if t <= 0:
            raise ValueError("heat kernel time must be positive")
        x_grid = np.asarray(x_grid, dtype=float)
        if self.has_atoms:
            out = np.zeros_like(x_grid)
            for x0, w in zip(self.xs, self.weights):
                out += w * heat_kernel(t, x_grid - x0)
            return out
        # trapezoid weights on the tabulation nodes
        dx = np.diff(self.xs)
        tw = np.zeros_like(self.xs)
        tw[:-1] += 0.5 * dx
        tw[1:] += 0.5 * dx
        kern = heat_kernel(t, x_grid[:, None] - self.xs[None, :])
        return kern @ (tw * self.weights)

    def density_on(self, x_grid: np.ndarray, sigma: float = 0.0) -> np.ndarray:
        """Mollified density (mu * h_{sigma^2}) sampled on the grid.

        sigma = 0 is only meaningful for tabulated measures (plain resampling).
        """
        if sigma < 0:
            raise ValueError("mollification width must be non-negative")
        if sigma == 0.0:
            if self.has_atoms:
                raise ValueError("atomic measure needs a positive mollification width")
            return np.interp(x_grid, self.xs, self.weights, left=0.0, right=0.0)
        return self.convolve_heat(sigma * sigma, x_grid)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "point":
            return np.full(n, self.xs[0])
        if self.kind == "mixture":
            probs = self.weights / self.weights.sum()
            return rng.choice(self.xs, size=n, p=probs)
        # tabulated: inverse CDF on the piecewise-linear cumulative
        dx = np.diff(self.xs)
        seg = 0.5 * (self.weights[:-1] + self.weights[1:]) * dx
        cdf = np.concatenate([[0.0], np.cumsum(seg)])
        cdf /= cdf[-1]
        u = rng.random(n)
        return np.interp(u, cdf, self.xs)

    def to_dict(self):
        if self.kind == "point":
            return {"kind": "point", "x": float(self.xs[0]), "mass": float(self.weights[0])}
        if self.kind == "mixture":
            return {"kind": "mixture", "xs": self.xs.tolist(), "weights": self.weights.tolist()}
        return {"kind": "tabulated", "x": self.xs.tolist(), "density": self.weights.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Measure":
        kind = data["kind"]
        if kind == "point":
            return cls.point(data["x"], data.get("mass", 1.0))
        if kind == "mixture":
            return cls.mixture(data["xs"], data["weights"])
        if kind == "tabulated":
            return cls.tabulated(data["x"], data["density"])
        raise ValueError(f"unknown measure kind {kind!r}")


def heat_kernel_convolve(mu: Measure, t: float, x_grid) -> np.ndarray:
    """(mu * h_t) evaluated on x_grid; integrates to mu's mass up to quadrature error."""
    return mu.convolve_heat(t, np.asarray(x_grid, dtype=float))

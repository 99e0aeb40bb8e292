"""Local-volatility surfaces and their construction from call prices.

A surface evaluates sigma_tilde(t, x) = sigma(t, e^x) on log-price
coordinates, clamped to configured bounds so that the uniform ellipticity
and boundedness assumptions of the solvers always hold.  Construction from
a call-price grid uses the classical relation

    sigma(t, K)^2 = 2 (dC/dt + r K dC/dK) / (K^2 d2C/dK2)

with central finite differences and a repair policy for degenerate nodes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = ["VolSurface", "ArbitrageError", "DupireBuildReport",
           "eval_sigma_tilde", "dupire_from_calls"]


class ArbitrageError(ValueError):
    """Raised when a call grid is unusable (butterfly violations or too many
    degenerate nodes).  Carries the offending (t, K) nodes."""

    def __init__(self, message: str, nodes):
        super().__init__(message)
        self.nodes = list(nodes)


@dataclass(frozen=True)
class VolSurface:
    """Bounded local-volatility function on log-price coordinates.

    kind is one of "constant", "parametric" (a callable of (t, x)) or
    "tabulated" (bilinear interpolation on a rectangular (t, x) grid with
    clamped extrapolation).  Every evaluation is clamped to
    [sigma_low, sigma_high].  h0 and chi record the Hoelder-in-time
    constants declared or estimated for the surface.
    """

    kind: str
    sigma_low: float = 0.01
    sigma_high: float = 2.0
    value: float = 0.0
    fn: Callable | None = None
    t_nodes: np.ndarray | None = None
    x_nodes: np.ndarray | None = None
    values: np.ndarray | None = None
    h0: float = 0.0
    chi: float = 1.0

    def __post_init__(self):
        if not 0 < self.sigma_low <= self.sigma_high:
            raise ValueError("need 0 < sigma_low <= sigma_high")
        if self.kind == "constant":
            if not self.value > 0:
                raise ValueError("constant surface needs a positive value")
        elif self.kind == "parametric":
            if self.fn is None:
                raise ValueError("parametric surface needs a callable")
        elif self.kind == "tabulated":
            t = np.asarray(self.t_nodes, dtype=float)
            x = np.asarray(self.x_nodes, dtype=float)
            v = np.asarray(self.values, dtype=float)
            if t.ndim != 1 or x.ndim != 1 or v.shape != (t.size, x.size):
                raise ValueError("tabulated surface needs values of shape (len(t), len(x))")
            if t.size > 1 and np.any(np.diff(t) <= 0):
                raise ValueError("t nodes must be strictly increasing")
            if np.any(np.diff(x) <= 0):
                raise ValueError("x nodes must be strictly increasing")
            object.__setattr__(self, "t_nodes", t)
            object.__setattr__(self, "x_nodes", x)
            object.__setattr__(self, "values", v)
        else:
            raise ValueError(f"unknown surface kind {self.kind!r}")

    @classmethod
    def constant(cls, value: float, sigma_low: float = 0.01, sigma_high: float = 2.0) -> "VolSurface":
        return cls(kind="constant", value=value, sigma_low=sigma_low,
                   sigma_high=sigma_high, h0=0.0, chi=1.0)

    @classmethod
    def parametric(cls, fn: Callable, sigma_low: float = 0.01, sigma_high: float = 2.0,
                   h0: float = 0.0, chi: float = 1.0) -> "VolSurface":
        return cls(kind="parametric", fn=fn, sigma_low=sigma_low, sigma_high=sigma_high,
                   h0=h0, chi=chi)

    @classmethod
    def tabulated(cls, t_nodes, x_nodes, values, sigma_low: float = 0.01,
                  sigma_high: float = 2.0) -> "VolSurface":
        t = np.atleast_1d(np.asarray(t_nodes, dtype=float))
        v = np.asarray(values, dtype=float)
        h0 = 0.0
        if t.size > 1:
            dt = np.diff(t)[:, None]
            h0 = float(np.max(np.abs(np.diff(v, axis=0)) / dt))
        return cls(kind="tabulated", t_nodes=t, x_nodes=x_nodes, values=v,
                   sigma_low=sigma_low, sigma_high=sigma_high, h0=h0, chi=1.0)

    def sigma(self, t, x):
        """Clamped sigma_tilde(t, x); accepts scalars or arrays in x."""
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            raw = np.full(x.shape, self.value) if x.ndim else self.value
        elif self.kind == "parametric":
            raw = self.fn(t, x)
        else:
            raw = self._bilinear(float(t), x)
        out = np.clip(raw, self.sigma_low, self.sigma_high)
        return float(out) if np.ndim(out) == 0 else out

    def _bilinear(self, t: float, x: np.ndarray):
        tn, xn, v = self.t_nodes, self.x_nodes, self.values
        if tn.size == 1:
            row = v[0]
        else:
            tc = min(max(t, tn[0]), tn[-1])
            it = min(int(np.searchsorted(tn, tc, side="right") - 1), tn.size - 2)
            it = max(it, 0)
            w = (tc - tn[it]) / (tn[it + 1] - tn[it])
            row = (1.0 - w) * v[it] + w * v[it + 1]
        return np.interp(x, xn, row)

    def dsigma_dx(self, t, x):
        """Spatial derivative by central differencing of the clamped surface."""
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.zeros(x.shape) if x.ndim else 0.0
        if self.kind == "tabulated":
            step = 0.5 * float(np.min(np.diff(self.x_nodes)))
        else:
            step = 1e-5
        return (self.sigma(t, x + step) - self.sigma(t, x - step)) / (2.0 * step)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "sigma_low": self.sigma_low,
               "sigma_high": self.sigma_high, "h0": self.h0, "chi": self.chi}
        if self.kind == "constant":
            out["value"] = self.value
        elif self.kind == "tabulated":
            out["t"] = self.t_nodes.tolist()
            out["x"] = self.x_nodes.tolist()
            out["values"] = self.values.tolist()
        else:
            raise ValueError("parametric surfaces are not serialisable")
        return out

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, data: dict) -> "VolSurface":
        kind = data["kind"]
        if kind == "constant":
            return cls.constant(data["value"], data.get("sigma_low", 0.01),
                                data.get("sigma_high", 2.0))
        if kind == "tabulated":
            return cls.tabulated(data["t"], data["x"], data["values"],
                                 data.get("sigma_low", 0.01), data.get("sigma_high", 2.0))
        raise ValueError(f"cannot load surface kind {kind!r}")

    @classmethod
    def load(cls, path) -> "VolSurface":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def eval_sigma_tilde(surface: VolSurface, t: float, x):
    """sigma_tilde(t, x) = sigma(t, e^x), clamped to the surface bounds."""
    return surface.sigma(t, x)


@dataclass(frozen=True)
class DupireBuildReport:
    """Surface plus the list of repaired (t, K) nodes."""

    surface: VolSurface
    flagged: list
    n_total: int


def _second_derivative(c: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Three-point second derivative in K at interior strikes (possibly non-uniform)."""
    h0 = k[1:-1] - k[:-2]
    h1 = k[2:] - k[1:-1]
    return 2.0 * (h0 * c[:, 2:] - (h0 + h1) * c[:, 1:-1] + h1 * c[:, :-2]) \
        / (h0 * h1 * (h0 + h1))


def dupire_from_calls(t, strikes, calls, r: float = 0.0, sigma_low: float = 0.01,
                      sigma_high: float = 2.0, denom_floor: float | None = None,
                      s0: float | None = None) -> DupireBuildReport:
    """Local-volatility surface from call prices C(t, K) on a rectangular grid.

    All three derivatives use central differences (one-sided in t at the first
    and last maturity).  Nodes whose density term K^2 d2C/dK2 falls at or
    below ``denom_floor`` (default 1e-10 * s0^2) or whose implied variance is
    not positive are flagged and repaired from the nearest valid neighbour in
    K, then in t.  A grid with negative butterfly curvature anywhere, or with
    more than 20% flagged nodes, raises ArbitrageError.
    """
    t = np.asarray(t, dtype=float)
    k = np.asarray(strikes, dtype=float)
    c = np.asarray(calls, dtype=float)
    if k.size < 3 or t.size < 2:
        raise ValueError("need at least 3 strikes and 2 maturities")
    if c.shape != (t.size, k.size):
        raise ValueError("call grid must have shape (len(t), len(strikes))")
    if np.any(np.diff(t) <= 0) or np.any(np.diff(k) <= 0):
        raise ValueError("maturities and strikes must be strictly increasing")
    if np.any(t <= 0) or np.any(k <= 0):
        raise ValueError("maturities and strikes must be positive")
    if s0 is None:
        s0 = float(np.median(k))
    if denom_floor is None:
        denom_floor = 1e-10 * s0 * s0

    dcdt = np.gradient(c, t, axis=0)
    dcdk = np.gradient(c, k, axis=1)[:, 1:-1]
    d2c = _second_derivative(c, k)
    ki = k[1:-1]

    bad = np.argwhere(d2c < 0.0)
    if bad.size:
        nodes = [(float(t[i]), float(ki[j])) for i, j in bad]
        raise ArbitrageError(
            f"negative butterfly curvature at {len(nodes)} node(s)", nodes)

    denom = ki[None, :] ** 2 * d2c
    numer = dcdt[:, 1:-1] + r * ki[None, :] * dcdk
    with np.errstate(divide="ignore", invalid="ignore"):
        var = 2.0 * numer / denom
    flagged_mask = (denom <= denom_floor) | ~np.isfinite(var) | (var <= 0.0)
    n_total = flagged_mask.size
    n_flagged = int(flagged_mask.sum())
    if n_flagged > 0.2 * n_total:
        nodes = [(float(t[i]), float(ki[j])) for i, j in np.argwhere(flagged_mask)]
        raise ArbitrageError(
            f"{n_flagged}/{n_total} nodes are degenerate", nodes)

    sigma = np.where(flagged_mask, np.nan, np.sqrt(np.maximum(var, 0.0)))
    _repair_nearest(sigma)
    sigma = np.clip(sigma, sigma_low, sigma_high)
    surface = VolSurface.tabulated(t, np.log(ki), sigma,
                                   sigma_low=sigma_low, sigma_high=sigma_high)
    flagged = [(float(t[i]), float(ki[j])) for i, j in np.argwhere(flagged_mask)]
    return DupireBuildReport(surface=surface, flagged=flagged, n_total=n_total)


def _repair_nearest(sigma: np.ndarray) -> None:
    """Fill NaN nodes from the nearest valid strike on the same maturity,
    then from the nearest valid maturity at the same strike (in place)."""
    nt, nk = sigma.shape
    cols = np.arange(nk)
    for i in range(nt):
        row = sigma[i]
        good = np.isfinite(row)
        if good.any() and not good.all():
            nearest = cols[good][np.argmin(np.abs(cols[good][None, :] - cols[~good][:, None]), axis=1)]
            row[~good] = row[nearest]
    rows = np.arange(nt)
    for j in range(nk):
        col = sigma[:, j]
        good = np.isfinite(col)
        if good.any() and not good.all():
            nearest = rows[good][np.argmin(np.abs(rows[good][None, :] - rows[~good][:, None]), axis=1)]
            col[~good] = col[nearest]
    if not np.all(np.isfinite(sigma)):
        raise ArbitrageError("no valid node available for repair", [])

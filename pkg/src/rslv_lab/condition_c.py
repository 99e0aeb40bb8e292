"""Deciding Condition (C) and constructing coercivity certificates.

Condition (C) asks for a symmetric positive definite Gamma whose weighted
difference matrices Gamma^(k) are positive definite on e_k-perp; it is the
structural hypothesis behind the uniform coercivity of Pi A on the state
domain.  This module provides

  * the exact closed-form criterion for d = 3 (and its r-linkage),
  * the sufficient identity-matrix criterion for any d,
  * the exact criterion for a *given* diagonal matrix,
  * the planar grid search that decides existence of a diagonal matrix,
    together with recovery of a concrete diagonal from a passing point,
  * a sampled coercivity certificate Pi = J_d + eps * Gamma with an
    estimated coercivity constant kappa_hat.

A failing grid search at finite resolution is non-detection, not disproof,
except for d = 3 where the closed-form criterion is exact.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .regime_model import RegimeModel, a_eps_batch

__all__ = [
    "CertificateError",
    "RecoveryFailure",
    "GammaCandidate",
    "CoercivityCertificate",
    "D3Report",
    "GridSearchReport",
    "gamma_k_matrix",
    "gamma_k_submatrix",
    "satisfies_condition_c",
    "criterion_d3",
    "criterion_identity",
    "criterion_diag",
    "grid_search_diag",
    "coercivity_certificate",
    "sample_quadratic_min",
    "sample_domain_states",
    "recover_alpha_from_point",
    "worker_count",
]

_SYM_TOL = 1e-12
_MARGIN = 1e-12


class CertificateError(RuntimeError):
    """Raised when no coercivity certificate can be issued."""


class RecoveryFailure(RuntimeError):
    """Raised when no auxiliary distribution realises a passing grid point.

    Distinct from "Condition (C) is false": the point itself passed the
    criterion, only the constructive search ran out of room.
    """


def worker_count() -> int:
    """Worker cap from RSLV_LAB_THREADS (default 1, deterministic either way)."""
    raw = os.environ.get("RSLV_LAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass(frozen=True)
class GammaCandidate:
    """A symmetric matrix proposed to satisfy Condition (C)."""

    gamma: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError("gamma must be a square matrix")
        if np.max(np.abs(g - g.T), initial=0.0) > _SYM_TOL:
            raise ValueError("gamma must be symmetric within 1e-12")
        object.__setattr__(self, "gamma", 0.5 * (g + g.T))


@dataclass(frozen=True)
class CoercivityCertificate:
    """Pi = J_d + eps * Gamma together with sampled coercivity evidence.

    kappa_hat is the smallest sampled value of xi' sym(Pi A(rho)) xi over
    random unit xi and states rho, capped at l_min(Pi)/2.
    """

    pi: np.ndarray
    eps: float
    z: float
    kappa_hat: float


@dataclass(frozen=True)
class D3Report:
    """Closed-form d = 3 decision with the pairwise ratio sums r_i >= 2."""

    r1: float
    r2: float
    r3: float
    lhs: float
    satisfied: bool


@dataclass(frozen=True)
class GridSearchReport:
    """Outcome of the planar diagonal-existence search at resolution n.

    ``points`` are the (x, y) grid points satisfying the planar criterion;
    ``satisfied`` means a point was found (or, when ``fallback`` is set, that
    the degenerate-multiset fallback criterion decided the question).
    """

    n: int
    points: np.ndarray
    satisfied: bool
    fallback: str | None = None


def _as_gamma(gamma) -> np.ndarray:
    if isinstance(gamma, GammaCandidate):
        return gamma.gamma
    return GammaCandidate(np.asarray(gamma, dtype=float)).gamma


def gamma_k_matrix(gamma, model: RegimeModel, k: int) -> np.ndarray:
    """Full d x d matrix Gamma^(k)_ij = (lam_i + lam_j)/2 * (G_ij + G_kk - G_ik - G_jk).

    k is 1-based, matching the regime index convention.
    """
    g = _as_gamma(gamma)
    d = model.d
    if g.shape[0] != d:
        raise ValueError("gamma dimension does not match the model")
    if not 1 <= k <= d:
        raise ValueError(f"regime index k={k} out of range 1..{d}")
    kk = k - 1
    lam = model.lam
    w = 0.5 * (lam[:, None] + lam[None, :])
    core = g + g[kk, kk] - g[kk, :][None, :] - g[:, kk][:, None]
    return w * core

def gamma_k_submatrix(gamma, model: RegimeModel, k: int) -> np.ndarray:
    """Gamma^(k) with its k-th row and column removed.

    Positive definiteness of the returned (d-1) x (d-1) matrix on R^{d-1} is
    equivalent to positive definiteness of Gamma^(k) on e_k-perp.
    """
    full = gamma_k_matrix(gamma, model, k)
    keep = [i for i in range(model.d) if i != k - 1]
    return full[np.ix_(keep, keep)]


def _smallest_eigenvalue(sym: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (sym + sym.T))[0])


def _pd_tol(mat: np.ndarray) -> float:
    return 1e-10 * float(np.max(np.abs(mat), initial=0.0))


def satisfies_condition_c(gamma, model: RegimeModel, tol: float | None = None) -> bool:
    """True iff gamma is SPD and every deleted Gamma^(k) submatrix is PD.

    ``tol`` is the eigenvalue threshold; defaults to 1e-10 * ||matrix||_inf
    per tested matrix, which is robust near the boundary of (C).
    """
    g = _as_gamma(gamma)
    if g.shape[0] != model.d:
        raise ValueError("gamma dimension does not match the model")
    if _smallest_eigenvalue(g) <= (_pd_tol(g) if tol is None else tol):
        return False
    for k in range(1, model.d + 1):
        sub = gamma_k_submatrix(g, model, k)
        if _smallest_eigenvalue(sub) <= (_pd_tol(sub) if tol is None else tol):
            return False
    return True


def _ratio_sums(lam) -> tuple[float, float, float]:
    l1, l2, l3 = (float(v) for v in lam)
    r1 = l3 / l2 + l2 / l3
    r2 = l3 / l1 + l1 / l3
    r3 = l1 / l2 + l2 / l1
    return r1, r2, r3


def criterion_d3(lam) -> D3Report:
    """Exact d = 3 decision: (C) holds iff

        1/sqrt((r1-2)(r2-2)) + 1/sqrt((r2-2)(r3-2)) + 1/sqrt((r1-2)(r3-2)) > 1/4

    with the convention 1/0 = +inf (any repeated lambda value satisfies (C)).
    """
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (3,):
        raise ValueError("the closed-form criterion needs exactly three values")
    if np.any(lam <= 0):
        raise ValueError("variance levels must be positive")
    r1, r2, r3 = _ratio_sums(lam)
    pairs = [(r1, r2), (r2, r3), (r1, r3)]
    lhs = 0.0
    for a, b in pairs:
        prod = (a - 2.0) * (b - 2.0)
        if prod <= 0.0:
            lhs = math.inf
            break
        lhs += 1.0 / math.sqrt(prod)
    return D3Report(r1=r1, r2=r2, r3=r3, lhs=lhs, satisfied=lhs > 0.25)


def criterion_identity(model: RegimeModel) -> bool:
    """Sufficient condition for Gamma = I_d:

        max_k sqrt( sum_{i != k} lam_i * sum_{i != k} 1/lam_i ) < d + 1.
    """
    lam = model.lam
    s1 = lam.sum() - lam
    s2 = (1.0 / lam).sum() - 1.0 / lam
    return bool(np.max(np.sqrt(s1 * s2)) < model.d + 1)


def criterion_diag(model: RegimeModel, alpha_diag) -> bool:
    """Exact criterion for Diag(alpha): for every k,

        2/a_k + sum_{i != k} 1/a_i > sqrt( sum_{i != k} lam_i/a_i * sum_{i != k} 1/(lam_i a_i) ).
    """
    a = np.asarray(alpha_diag, dtype=float)
    if a.shape != model.lam.shape:
        raise ValueError("alpha_diag must have one entry per regime")
    if np.any(a <= 0):
        raise ValueError("diagonal entries must be positive")
    lam = model.lam
    inv_a = 1.0 / a
    s_la = (lam * inv_a).sum() - lam * inv_a
    s_ia = (inv_a / lam).sum() - inv_a / lam
    lhs = 2.0 * inv_a + (inv_a.sum() - inv_a)
    rhs = np.sqrt(s_la * s_ia)
    return bool(np.all(lhs > rhs))


def _moment_sums(x, y, lam_full: np.ndarray):
    """M_0, M_1, M_-1 at (x, y), summed over the full lambda multiset."""
    inv = 1.0 / (2.0 + np.multiply.outer(x, 1.0 / lam_full) + np.multiply.outer(y, lam_full))
    fac = np.asarray(x) * np.asarray(y) - 1.0
    m0 = fac * inv.sum(axis=-1)
    m1 = fac * (inv @ lam_full)
    mm1 = fac * (inv @ (1.0 / lam_full))
    return m0, m1, mm1


def grid_search_diag(model: RegimeModel, n: int) -> GridSearchReport:
    """Planar grid search for a diagonal matrix satisfying Condition (C).

    Builds (d-1)(n-1)^2 points of the convex polygon with vertices
    (l_i, 1/l_i) (l = sorted distinct lambda values) and keeps those whose
    pulled-back point (X, Y) falls strictly inside the polygon while
    M_0 < 1.  Moment sums run over the full lambda multiset.  Repeated
    lambda values collapse polygon segments and are deduplicated; if fewer
    than three distinct values remain the question is delegated to the
    exact d = 3 criterion or the identity criterion.
    """
    if model.d < 3:
        raise ValueError("the grid search needs d >= 3")
    if n < 2:
        raise ValueError("grid resolution must be at least 2")
    lam_full = np.sort(model.lam)
    l = np.unique(lam_full)
    if l.size == 1:
        return GridSearchReport(n=n, points=np.empty((0, 2)), satisfied=True,
                                fallback="identity")
    if l.size < 3:
        if model.d == 3:
            rep = criterion_d3(model.lam)
            return GridSearchReport(n=n, points=np.empty((0, 2)),
                                    satisfied=rep.satisfied, fallback="d3")
        return GridSearchReport(n=n, points=np.empty((0, 2)),
                                satisfied=criterion_identity(model),
                                fallback="identity")

    l1, ld = l[0], l[-1]
    hull_slope = 1.0 / (l1 * ld)
    k1 = np.arange(1, n) / n
    k2 = np.arange(1, n) / n
    found = []
    for i in range(l.size - 1):
        x = l[i] + (l[i + 1] - l[i]) * k1                       # (n-1,)
        y_min = (1.0 / l[i]) * (1.0 - k1) + (1.0 / l[i + 1]) * k1
        y_max = 1.0 / l1 - (x - l1) * hull_slope
        y = y_min[:, None] + (y_max - y_min)[:, None] * k2[None, :]   # (n-1, n-1)
        xx = np.broadcast_to(x[:, None], y.shape)

        m0, m1, mm1 = _moment_sums(xx, y, lam_full)
        ok = m0 < 1.0 - _MARGIN
        denom = np.where(ok, 1.0 - m0, 1.0)
        X = (xx - m1) / denom
        ok &= (X > l1 + _MARGIN) & (X < ld - _MARGIN)
        Xc = np.where(ok, X, l1)
        j = np.clip(np.searchsorted(l, Xc, side="right") - 1, 0, l.size - 2)
        z_min = 1.0 / l[j] - (Xc - l[j]) / (l[j] * l[j + 1])
        z_max = 1.0 / l1 - (Xc - l1) * hull_slope
        Y = (y - mm1) / denom
        ok &= (Y > z_min + _MARGIN) & (Y < z_max - _MARGIN)
        if np.any(ok):
            found.append(np.column_stack([xx[ok], y[ok]]))
    points = np.concatenate(found) if found else np.empty((0, 2))
    return GridSearchReport(n=n, points=points, satisfied=points.shape[0] > 0)


def recover_alpha_from_point(model: RegimeModel, x: float, y: float,
                             tol: float = 1e-12) -> np.ndarray:
    """Diagonal entries alpha = 1/p recovered from a passing grid point.

    Finds a strictly positive probability vector q with sum lam q = X(x, y)
    and sum q/lam = Y(x, y) (linear program maximising the smallest entry),
    then sets p_i = (1 - M_0) q_i + (xy - 1) / (2 + x/lam_i + lam_i y).
    The result is validated through the exact diagonal criterion.
    """
    lam = model.lam
    m0, m1, mm1 = _moment_sums(float(x), float(y), lam)
    if not m0 < 1.0:
        raise RecoveryFailure(f"point ({x}, {y}) has M_0 = {m0} >= 1")
    X = (x - m1) / (1.0 - m0)
    Y = (y - mm1) / (1.0 - m0)

    d = model.d
    # variables (q_1..q_d, t): maximise t subject to q_i >= t and the moment matches
    c = np.zeros(d + 1)
    c[-1] = -1.0
    a_eq = np.zeros((3, d + 1))
    a_eq[0, :d] = lam
    a_eq[1, :d] = 1.0 / lam
    a_eq[2, :d] = 1.0
    b_eq = np.array([X, Y, 1.0])
    a_ub = np.hstack([-np.eye(d), np.ones((d, 1))])
    b_ub = np.zeros(d)
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                  bounds=[(0.0, 1.0)] * d + [(0.0, 1.0)], method="highs")
    if not res.success or res.x[-1] <= tol:
        raise RecoveryFailure(
            f"no strictly positive distribution realises (X, Y) = ({X}, {Y})")
    q = res.x[:d]
    p = (1.0 - m0) * q + (x * y - 1.0) / (2.0 + x / lam + lam * y)
    if np.any(p <= 0):
        raise RecoveryFailure("recovered weights are not strictly positive")
    alpha = 1.0 / p
    if not criterion_diag(model, alpha):
        raise RecoveryFailure("recovered diagonal fails the exact criterion")
    return alpha


def sample_domain_states(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Random states on the simplex interior and its faces (rows of shape (n, d)).

    Roughly a third of the rows have a random subset of coordinates zeroed,
    which exercises the boundary faces of the domain; rows are never all zero.
    """
    rho = rng.exponential(1.0, size=(n, d))
    mask = rng.random((n, d)) < 0.35
    keep_rows = rng.random(n) < 0.5
    mask[keep_rows] = False
    rho[mask] = 0.0
    dead = ~np.any(rho > 0, axis=1)
    if np.any(dead):
        rho[dead, rng.integers(0, d, size=int(dead.sum()))] = 1.0
    return rho


def sample_quadratic_min(pi: np.ndarray, model: RegimeModel, samples: int,
                         seed: int = 0, eps: float | None = None,
                         chunk: int = 200_000):
    """Minimum of xi' Pi A(rho) xi / xi'xi over random (rho, xi) pairs.

    Deterministic for a given seed independent of the worker count: chunks
    draw from spawned child streams and the minima are reduced in chunk
    order.  Returns (min_value, argmin_rho, argmin_xi).
    """
    lam = model.lam
    if eps is None:
        # far below any sum lam*rho produced by the sampler
        eps = 1e-12 * model.lam_min
    n_chunks = (samples + chunk - 1) // chunk
    seeds = np.random.SeedSequence(seed).spawn(n_chunks)

    def one_chunk(args):
        child, count = args
        rng = np.random.Generator(np.random.Philox(child))
        rho = sample_domain_states(model.d, count, rng)
        xi = rng.normal(size=(count, model.d))
        xi /= np.linalg.norm(xi, axis=1, keepdims=True)
        a = a_eps_batch(rho, lam, eps)
        w = np.einsum("ij,nj->ni", pi, np.einsum("nij,nj->ni", a, xi))
        q = np.einsum("ni,ni->n", xi, w)
        k = int(np.argmin(q))
        return float(q[k]), rho[k], xi[k]

    sizes = [chunk] * (n_chunks - 1) + [samples - chunk * (n_chunks - 1)]
    jobs = list(zip(seeds, sizes))
    workers = worker_count()
    if workers > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one_chunk, jobs))
    else:
        results = [one_chunk(j) for j in jobs]
    best = min(results, key=lambda r: r[0])
    return best


def coercivity_certificate(gamma, model: RegimeModel, samples: int = 100_000,
                           seed: int = 0) -> CoercivityCertificate:
    """Certificate Pi = J_d + eps Gamma with sampled coercivity constant.

    eps is 0.9 times the explicit admissibility bound

        ( d ||G||_inf (1 + lmax/lmin) (1 + d^2 ||G||_inf (1 + lmax/lmin) / (2 z)) )^-1

    where z = min_k z_k / (2 lam_max), z_k = ztilde_k / d, and ztilde_k is the
    smallest eigenvalue of the deleted Gamma^(k) submatrix.  kappa_hat is the
    sampled minimum of the quadratic form, capped at l_min(Pi)/2.
    """
    g = _as_gamma(gamma)
    if not satisfies_condition_c(g, model):
        raise CertificateError("gamma does not satisfy Condition (C)")
    d = model.d
    ztilde = np.array([_smallest_eigenvalue(gamma_k_submatrix(g, model, k))
                       for k in range(1, d + 1)])
    z = float(np.min(ztilde / d) / (2.0 * model.lam_max))
    gnorm = float(np.max(np.abs(g)))
    ratio = 1.0 + model.lam_max / model.lam_min
    bound = 1.0 / (d * gnorm * ratio * (1.0 + d * d * gnorm * ratio / (2.0 * z)))
    eps = 0.9 * bound
    pi = np.ones((d, d)) + eps * g
    kappa, rho_min, xi_min = sample_quadratic_min(pi, model, samples, seed=seed)
    if kappa <= 0.0:
        raise CertificateError(
            "sampled quadratic form is not positive: "
            f"rho={rho_min.tolist()}, xi={xi_min.tolist()}, value={kappa}")
    lmin_pi = float(np.linalg.eigvalsh(pi)[0])
    kappa_hat = min(kappa, 0.5 * lmin_pi)
    return CoercivityCertificate(pi=pi, eps=eps, z=z, kappa_hat=kappa_hat)

"""Statistical verification utilities: normal CDF, KS statistic, moment and
histogram checks, Monte Carlo standard errors, and a small report type."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from typing import Callable

import numpy as np
from scipy.special import erfc

__all__ = [
    "TestReport",
    "normal_cdf",
    "ks_statistic",
    "l1_hist_distance",
    "Moments",
    "moments",
    "mc_stderr",
]


@dataclass(frozen=True)
class TestReport:
    """One verification outcome; passes iff statistic <= threshold."""

    __test__ = False  # not a pytest case despite the name

    statistic: float
    threshold: float
    passed: bool
    n: int
    description: str

    @classmethod
    def check(cls, statistic: float, threshold: float, n: int, description: str) -> "TestReport":
        return cls(float(statistic), float(threshold), bool(statistic <= threshold), int(n), description)

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def normal_cdf(x):
    """Standard normal CDF via the complementary error function.

    Phi(x) = erfc(-x / sqrt(2)) / 2, accurate to well below 1e-7 everywhere.
    """
    scalar = np.ndim(x) == 0
    out = 0.5 * erfc(-np.asarray(x, dtype=float) / math.sqrt(2.0))
    return float(out) if scalar else out


def ks_statistic(samples, cdf: Callable) -> float:
    """One-sample Kolmogorov-Smirnov statistic against a given CDF.

    D = max_i max(i/n - F(x_(i)), F(x_(i)) - (i-1)/n) over the sorted sample.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n == 0:
        raise ValueError("need at least one sample")
    try:
        f = np.asarray(cdf(x), dtype=float)
        if f.shape != x.shape:
            raise TypeError
    except Exception:
        f = np.array([float(cdf(v)) for v in x])
    i = np.arange(1, n + 1)
    return float(np.max(np.maximum(i / n - f, f - (i - 1) / n)))


def l1_hist_distance(samples, density, bins: int = 100, rng=None) -> float:
    """L1 distance between the sample histogram and a reference probability density.

    The histogram is normalised to unit mass; ``density`` is a callable
    evaluated at bin centres (or an array of values at bin centres) and is
    renormalised over the binning window.  ``rng`` is an optional (lo, hi)
    range; defaults to sample mean +/- 5 sample std.
    """
    x = np.asarray(samples, dtype=float)
    if rng is None:
        m, s = x.mean(), x.std()
        rng = (m - 5.0 * s, m + 5.0 * s)
    counts, edges = np.histogram(x, bins=bins, range=rng)
    widths = np.diff(edges)
    centers = 0.5 * (edges[:-1] + edges[1:])
    hist = counts / counts.sum() / widths if counts.sum() > 0 else np.zeros(bins)
    ref = np.asarray(density(centers) if callable(density) else density, dtype=float)
    ref_mass = float(np.sum(ref * widths))
    if ref_mass <= 0:
        raise ValueError("reference density has no mass on the binning window")
    ref = ref / ref_mass
    return float(np.sum(np.abs(hist - ref) * widths))


@dataclass(frozen=True)
class Moments:
    mean: float
    var: float
    m4: float
    kurtosis: float


def moments(samples) -> Moments:
    """Sample mean, variance, fourth central moment and kurtosis."""
    x = np.asarray(samples, dtype=float)
    m = float(x.mean())
    c = x - m
    var = float(np.mean(c * c))
    m4 = float(np.mean(c ** 4))
    kurt = m4 / (var * var) if var > 0 else float("nan")
    return Moments(mean=m, var=var, m4=m4, kurtosis=kurt)


def mc_stderr(payoffs) -> float:
    """Standard error of the Monte Carlo mean of the given payoffs."""
    x = np.asarray(payoffs, dtype=float)
    if x.size < 2:
        return 0.0
    return float(x.std(ddof=1) / math.sqrt(x.size))

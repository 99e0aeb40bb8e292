"""Volatility surfaces and the call-grid construction."""

import numpy as np
import pytest

from rslv_lab.dupire import (ArbitrageError, VolSurface, dupire_from_calls,
                             eval_sigma_tilde)
from rslv_lab.stats import normal_cdf


def bs_grid(s0, vol, r, ts, ks):
    T, K = np.meshgrid(ts, ks, indexing="ij")
    d1 = (np.log(s0 / K) + (r + 0.5 * vol * vol) * T) / (vol * np.sqrt(T))
    d2 = d1 - vol * np.sqrt(T)
    return s0 * normal_cdf(d1) - K * np.exp(-r * T) * normal_cdf(d2)


class TestSurface:
    def test_constant_everywhere(self):
        s = VolSurface.constant(0.2)
        assert eval_sigma_tilde(s, 0.3, 1.7) == pytest.approx(0.2)
        np.testing.assert_allclose(s.sigma(0.0, np.linspace(-3, 3, 7)), 0.2)
        assert s.dsigma_dx(0.1, 0.5) == 0.0

    def test_tabulated_flat_grid(self):
        xs = np.linspace(-2, 2, 9)
        s = VolSurface.tabulated([0.5, 1.0], xs, np.full((2, 9), 0.2))
        assert s.sigma(0.75, 0.33) == pytest.approx(0.2)
        assert s.sigma(2.0, 5.0) == pytest.approx(0.2)  # clamped extrapolation

    def test_clamping_is_idempotent(self):
        s = VolSurface.constant(0.9, sigma_low=0.01, sigma_high=0.5)
        v = s.sigma(0.0, 0.0)
        assert v == pytest.approx(0.5)
        s2 = VolSurface.constant(v, sigma_low=0.01, sigma_high=0.5)
        assert s2.sigma(0.0, 0.0) == pytest.approx(v)

    def test_io_round_trip(self, tmp_path):
        xs = np.linspace(-1, 1, 5)
        vals = 0.2 + 0.01 * np.arange(10).reshape(2, 5)
        s = VolSurface.tabulated([0.5, 1.0], xs, vals)
        path = tmp_path / "surface.json"
        s.save(path)
        again = VolSurface.load(path)
        np.testing.assert_allclose(again.values, s.values)
        assert again.sigma(0.7, 0.2) == pytest.approx(s.sigma(0.7, 0.2))

    def test_validation(self):
        with pytest.raises(ValueError):
            VolSurface.constant(-0.1)
        with pytest.raises(ValueError):
            VolSurface.constant(0.2, sigma_low=0.5, sigma_high=0.1)
        with pytest.raises(ValueError):
            VolSurface.tabulated([1.0, 0.5], [0.0, 1.0], np.full((2, 2), 0.2))


class TestDupireFromCalls:
    def test_flat_vol_recovery(self):
        ts = np.arange(0.25, 1.0001, 0.02)
        ks = np.arange(0.75, 1.3001, 0.02)
        rep = dupire_from_calls(ts, ks, bs_grid(1.0, 0.2, 0.0, ts, ks), r=0.0)
        assert not rep.flagged
        # interior maturities use central time differences
        assert np.abs(rep.surface.values[1:-1] - 0.2).max() <= 0.01

    def test_flat_vol_with_rate(self):
        ts = np.arange(0.25, 1.0001, 0.02)
        ks = np.arange(0.75, 1.3001, 0.02)
        rep = dupire_from_calls(ts, ks, bs_grid(1.0, 0.2, 0.05, ts, ks), r=0.05)
        assert np.abs(rep.surface.values[1:-1] - 0.2).max() <= 0.01

    def test_monotone_dependence_on_level(self):
        for vol, klo, khi in ((0.1, 0.86, 1.14), (0.3, 0.65, 1.45)):
            ts = np.arange(0.25, 1.0001, 0.02)
            ks = np.arange(klo, khi + 1e-9, 0.02)
            rep = dupire_from_calls(ts, ks, bs_grid(1.0, vol, 0.0, ts, ks), r=0.0)
            assert np.abs(rep.surface.values[1:-1] - vol).max() <= 0.01

    def test_butterfly_violation(self):
        ts = np.array([0.5, 1.0])
        ks = np.array([0.9, 1.0, 1.1])
        c = bs_grid(1.0, 0.2, 0.0, ts, ks)
        c[:, 1] = c[:, (0, 2)].mean(axis=1) + 0.01
        with pytest.raises(ArbitrageError) as exc:
            dupire_from_calls(ts, ks, c, r=0.0)
        assert exc.value.nodes

    def test_too_small_grids(self):
        with pytest.raises(ValueError):
            dupire_from_calls([0.5, 1.0], [1.0, 1.1], np.zeros((2, 2)), r=0.0)
        with pytest.raises(ValueError):
            dupire_from_calls([0.5], [0.9, 1.0, 1.1], np.zeros((1, 3)), r=0.0)

    def test_flagged_nodes_are_repaired(self):
        ts = np.arange(0.25, 0.8601, 0.02)
        # wide wings: far-OTM curvature underflows the density floor
        ks = np.concatenate([np.arange(0.7, 1.3001, 0.02), [2.5, 2.52, 2.54]])
        c = bs_grid(1.0, 0.2, 0.0, ts, ks)
        rep = dupire_from_calls(ts, ks, c, r=0.0, denom_floor=1e-6)
        assert rep.flagged
        assert np.all(np.isfinite(rep.surface.values))
        assert np.all(rep.surface.values >= rep.surface.sigma_low)

    def test_mostly_degenerate_grid_rejected(self):
        ts = np.array([0.5, 0.75, 1.0])
        ks = np.array([0.9, 1.0, 1.1, 1.2])
        c = np.tile(np.maximum(1.0 - ks, 0.0), (3, 1))  # intrinsic only
        with pytest.raises(ArbitrageError):
            dupire_from_calls(ts, ks, c, r=0.0)

"""Grid solvers: heat-kernel oracles, conservation, closure and symmetry."""

import numpy as np
import pytest

from rslv_lab.dupire import VolSurface
from rslv_lab.fokker_planck import (PDSConfig, SpatialGrid,
                                    l1_grid_distance, mollify_initial,
                                    solve_fbm, solve_jump_fbm, solve_lv,
                                    solve_rslv, write_snapshots)
from rslv_lab.regime_model import (HorizonConfig, IntensityTable, Measure,
                                   RegimeModel)


def gaussian(x, var):
    return np.exp(-x * x / (2.0 * var)) / np.sqrt(2.0 * np.pi * var)


def model_14(q=None):
    return RegimeModel(lam=[1.0, 4.0], alpha=[0.5, 0.5], q=q)


SYM_Q = IntensityTable(rates=np.array([[0.0, 1.0], [1.0, 0.0]]))


class TestMollify:
    def test_point_mass_rows(self):
        grid = SpatialGrid(L=7.0, m=701)
        rows = mollify_initial(Measure.point(0.0), 0.1, grid, [0.3, 0.7])
        np.testing.assert_allclose(rows[0], 0.3 * gaussian(grid.x, 0.01), atol=1e-12)
        tw = grid.trapezoid_weights()
        np.testing.assert_allclose(rows @ tw, [0.3, 0.7], atol=1e-6)

    def test_tabulated_identity_without_mollification(self):
        grid = SpatialGrid(L=2.0, m=41)
        dens = np.maximum(1.0 - np.abs(grid.x), 0.0)
        mu = Measure.tabulated(grid.x, dens)
        rows = mollify_initial(mu, 0.0, grid, [1.0])
        np.testing.assert_allclose(rows[0], dens, atol=0)

    def test_atom_needs_width(self):
        grid = SpatialGrid(L=2.0, m=41)
        with pytest.raises(ValueError):
            mollify_initial(Measure.point(0.0), 0.0, grid, [1.0])


class TestFbmSolver:
    def test_equal_levels_reduce_to_heat(self):
        model = RegimeModel(lam=[2.0, 2.0], alpha=[0.3, 0.7])
        grid = SpatialGrid(L=6.0, m=301)
        cfg = PDSConfig(dt=1e-3, sigma_mollify=0.3, n_outputs=6)
        sol = solve_fbm(model, cfg, grid, HorizonConfig(T=0.5), Measure.point(0.0))
        for k, t in enumerate(sol.times):
            if t == 0:
                continue
            for i, a in enumerate(model.alpha):
                ref = a * gaussian(grid.x, 0.09 + t)
                assert l1_grid_distance(grid, sol.p[k, i], ref) <= 5e-3

    def test_sum_tracks_heat_kernel(self):
        grid = SpatialGrid(L=6.0, m=301)
        cfg = PDSConfig(dt=1e-3, sigma_mollify=0.3, n_outputs=6)
        sol = solve_fbm(model_14(), cfg, grid, HorizonConfig(T=0.5), Measure.point(0.0))
        worst = max(l1_grid_distance(grid, sol.total_density(k), gaussian(grid.x, 0.09 + t))
                    for k, t in enumerate(sol.times) if t > 0)
        assert worst <= 5e-3
        assert sol.diagnostics.min_value.min() >= -1e-8

    def test_per_state_mass_conservation(self):
        grid = SpatialGrid(L=6.0, m=201)
        cfg = PDSConfig(dt=2e-3, sigma_mollify=0.3, n_outputs=5)
        sol = solve_fbm(model_14(), cfg, grid, HorizonConfig(T=0.4), Measure.point(0.0))
        masses = sol.diagnostics.masses
        assert np.abs(masses - masses[0]).max() <= 1e-10
        assert sol.diagnostics.max_mass_drift <= 1e-12

    def test_energy_decay(self):
        grid = SpatialGrid(L=6.0, m=201)
        cfg = PDSConfig(dt=2e-3, sigma_mollify=0.3, n_outputs=5)
        sol = solve_fbm(model_14(), cfg, grid, HorizonConfig(T=0.4), Measure.point(0.0))
        assert sol.diagnostics.max_energy_increase <= 1e-10

    def test_refinement_halves_the_error(self):
        def err(m_nodes, dt):
            grid = SpatialGrid(L=6.0, m=m_nodes)
            cfg = PDSConfig(dt=dt, sigma_mollify=0.3, n_outputs=6)
            sol = solve_fbm(model_14(), cfg, grid, HorizonConfig(T=0.5),
                            Measure.point(0.0))
            return max(l1_grid_distance(grid, sol.total_density(k),
                                        gaussian(grid.x, 0.09 + t))
                       for k, t in enumerate(sol.times) if t > 0)
        assert err(301, 2e-3) / err(601, 1e-3) >= 2.0

    def test_heat_closure_matches_scalar_solver(self):
        # summed system and the scalar solve are the same banded recursion
        grid = SpatialGrid(L=6.0, m=201)
        cfg = PDSConfig(dt=2e-3, sigma_mollify=0.3, n_outputs=5)
        hor = HorizonConfig(T=0.4, r=0.5)
        sol = solve_fbm(model_14(), cfg, grid, HorizonConfig(T=0.4), Measure.point(0.0))
        ref = solve_lv(cfg, grid, hor, VolSurface.constant(1.0), Measure.point(0.0))
        worst = max(l1_grid_distance(grid, sol.total_density(k), ref.p[k, 0])
                    for k in range(len(sol.times)))
        assert worst <= 1e-10

    def test_rejects_jump_models(self):
        grid = SpatialGrid(L=6.0, m=201)
        cfg = PDSConfig(dt=1e-3, sigma_mollify=0.3)
        with pytest.raises(ValueError):
            solve_fbm(model_14(q=SYM_Q), cfg, grid, HorizonConfig(T=0.1),
                      Measure.point(0.0))

    def test_lumped_mass_variant_runs(self):
        grid = SpatialGrid(L=6.0, m=301)
        cfg = PDSConfig(dt=1e-3, sigma_mollify=0.3, n_outputs=4, mass_lumping=True)
        sol = solve_fbm(model_14(), cfg, grid, HorizonConfig(T=0.3), Measure.point(0.0))
        worst = max(l1_grid_distance(grid, sol.total_density(k), gaussian(grid.x, 0.09 + t))
                    for k, t in enumerate(sol.times) if t > 0)
        assert worst <= 2e-2
        masses = sol.diagnostics.masses
        assert np.abs(masses - masses[0]).max() <= 1e-10


class TestJumpSolver:
    def test_zero_rates_match_fbm_exactly(self):
        q0 = IntensityTable(rates=np.zeros((2, 2)))
        grid = SpatialGrid(L=6.0, m=201)
        cfg = PDSConfig(dt=2e-3, sigma_mollify=0.3, n_outputs=4)
        hor = HorizonConfig(T=0.3)
        a = solve_jump_fbm(model_14(q=q0), cfg, grid, hor, Measure.point(0.0))
        b = solve_fbm(model_14(), cfg, grid, hor, Measure.point(0.0))
        np.testing.assert_array_equal(a.p, b.p)

    def test_sum_still_tracks_heat_kernel(self):
        grid = SpatialGrid(L=6.0, m=301)
        cfg = PDSConfig(dt=1e-3, sigma_mollify=0.3, n_outputs=4)
        sol = solve_jump_fbm(model_14(q=SYM_Q), cfg, grid, HorizonConfig(T=0.4),
                             Measure.point(0.0))
        worst = max(l1_grid_distance(grid, sol.total_density(k), gaussian(grid.x, 0.09 + t))
                    for k, t in enumerate(sol.times) if t > 0)
        assert worst <= 5e-3

    def test_exchange_symmetry_with_equal_levels(self):
        # label exchange is a symmetry of the discrete system when the
        # variance levels coincide, so the two rows stay identical
        model = RegimeModel(lam=[2.0, 2.0], alpha=[0.5, 0.5], q=SYM_Q)
        grid = SpatialGrid(L=6.0, m=201)
        cfg = PDSConfig(dt=2e-3, sigma_mollify=0.3, n_outputs=4)
        sol = solve_jump_fbm(model, cfg, grid, HorizonConfig(T=0.3), Measure.point(0.0))
        assert np.abs(sol.p[:, 0] - sol.p[:, 1]).max() <= 1e-12

    def test_total_mass_conserved_under_exchange(self):
        grid = SpatialGrid(L=6.0, m=201)
        cfg = PDSConfig(dt=2e-3, sigma_mollify=0.3, n_outputs=4)
        sol = solve_jump_fbm(model_14(q=SYM_Q), cfg, grid, HorizonConfig(T=0.3),
                             Measure.point(0.0))
        total = sol.diagnostics.masses.sum(axis=1)
        assert np.abs(total - total[0]).max() <= 1e-10

    def test_needs_intensities(self):
        grid = SpatialGrid(L=6.0, m=201)
        cfg = PDSConfig(dt=1e-3, sigma_mollify=0.3)
        with pytest.raises(ValueError):
            solve_jump_fbm(model_14(), cfg, grid, HorizonConfig(T=0.1),
                           Measure.point(0.0))


class TestRslvAndLv:
    def test_sum_matches_scalar_solver(self):
        grid = SpatialGrid(L=6.0, m=301)
        hor = HorizonConfig(T=0.5, r=0.02)
        surf = VolSurface.constant(0.3)
        cfg = PDSConfig(dt=1e-3, sigma_mollify=0.3, n_outputs=5)
        sol = solve_rslv(model_14(q=SYM_Q), cfg, grid, hor, surf, Measure.point(0.0))
        ref = solve_lv(cfg, grid, hor, surf, Measure.point(0.0))
        worst = max(l1_grid_distance(grid, sol.total_density(k), ref.p[k, 0])
                    for k in range(len(sol.times)))
        assert worst <= 1e-8

    def test_lv_heat_reduction_with_matching_rate(self):
        # sigma = 1 with r = 1/2 cancels the drift entirely
        grid = SpatialGrid(L=6.0, m=301)
        cfg = PDSConfig(dt=1e-3, sigma_mollify=0.3, n_outputs=5)
        sol = solve_lv(cfg, grid, HorizonConfig(T=0.5, r=0.5),
                       VolSurface.constant(1.0), Measure.point(0.0))
        worst = max(l1_grid_distance(grid, sol.p[k, 0], gaussian(grid.x, 0.09 + t))
                    for k, t in enumerate(sol.times) if t > 0)
        assert worst <= 5e-3

    def test_lv_positive_in_the_interior(self):
        grid = SpatialGrid(L=6.0, m=301)
        cfg = PDSConfig(dt=1e-3, sigma_mollify=0.05,
                        output_times=(0.05, 0.2, 0.4))
        sol = solve_lv(cfg, grid, HorizonConfig(T=0.4, r=0.0),
                       VolSurface.constant(1.0), Measure.point(0.0))
        interior = slice(30, -30)
        for k, t in enumerate(sol.times):
            if t >= 0.05:
                assert sol.p[k, 0, interior].min() > 0.0

    def test_tabulated_surface_drift_terms(self):
        # x-dependent sigma exercises the derivative term in the drift
        grid = SpatialGrid(L=6.0, m=301)
        xs = np.linspace(-6.0, 6.0, 25)
        vals = 0.2 + 0.05 * np.tanh(xs)[None, :]
        surf = VolSurface.tabulated([0.0, 1.0], xs, np.vstack([vals, vals]))
        cfg = PDSConfig(dt=1e-3, sigma_mollify=0.3, n_outputs=4)
        sol = solve_lv(cfg, grid, HorizonConfig(T=0.4, r=0.01), surf, Measure.point(0.0))
        total = sol.diagnostics.masses.sum(axis=1)
        assert np.abs(total - total[0]).max() <= 1e-10
        assert sol.diagnostics.min_value.min() >= -1e-8


class TestThreeRegimes:
    def test_x_dependent_exchange_keeps_the_heat_marginal(self):
        # the summed density solves the heat equation regardless of how the
        # bounded intensities vary with x
        xs = np.linspace(-6, 6, 13)
        rates = np.zeros((13, 3, 3))
        for k, xv in enumerate(xs):
            w = 0.5 + 0.4 * np.tanh(xv)
            rates[k] = [[0, w, 0.3], [w, 0, 0.2], [0.1, 0.3, 0]]
        q = IntensityTable(rates=rates, x=xs)
        model = RegimeModel(lam=[0.5, 1.0, 3.0], alpha=[0.3, 0.3, 0.4], q=q)
        grid = SpatialGrid(L=6.0, m=241)
        cfg = PDSConfig(dt=1e-3, sigma_mollify=0.3, n_outputs=4)
        sol = solve_jump_fbm(model, cfg, grid, HorizonConfig(T=0.4),
                             Measure.point(0.0))
        worst = max(l1_grid_distance(grid, sol.total_density(k),
                                     gaussian(grid.x, 0.09 + t))
                    for k, t in enumerate(sol.times) if t > 0)
        assert worst <= 5e-3
        total = sol.diagnostics.masses.sum(axis=1)
        assert np.abs(total - total[0]).max() <= 1e-10

        surf = VolSurface.constant(0.3)
        hor = HorizonConfig(T=0.4, r=0.015)
        solr = solve_rslv(model, cfg, grid, hor, surf, Measure.point(0.0))
        ref = solve_lv(cfg, grid, hor, surf, Measure.point(0.0))
        closure = max(l1_grid_distance(grid, solr.total_density(k), ref.p[k, 0])
                      for k in range(len(solr.times)))
        assert closure <= 1e-8


class TestOutputs:
    def test_snapshot_files(self, tmp_path):
        grid = SpatialGrid(L=4.0, m=81)
        cfg = PDSConfig(dt=5e-3, sigma_mollify=0.3, n_outputs=3)
        sol = solve_fbm(model_14(), cfg, grid, HorizonConfig(T=0.2), Measure.point(0.0))
        meta = write_snapshots(sol, tmp_path, prefix="fbm")
        assert len(meta["snapshots"]) == 3
        first = tmp_path / meta["snapshots"][0]["file"]
        header = first.read_text().splitlines()[0]
        assert header == "x,p_1,p_2,sum,heat_ref"

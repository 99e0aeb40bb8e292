"""Command-line surface: exit codes, file outputs and reproducibility."""

import json

import numpy as np

from rslv_lab import cli
from rslv_lab.stats import normal_cdf


def small_solve_config(tmp_path, dt=2e-3, extra=None):
    cfg = {
        "model": {"lambda": [1.0, 4.0], "alpha": [0.5, 0.5]},
        "horizon": {"T": 0.2, "r": 0.0},
        "grid": {"L": 5.0, "m": 101},
        "pds": {"dt": dt, "sigma_mollify": 0.3, "n_outputs": 3},
        "initial": {"kind": "point", "x": 0.0},
        "output_dir": str(tmp_path / "out"),
    }
    if extra:
        cfg.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def small_sim_config(tmp_path, extra=None):
    cfg = {
        "model": {"lambda": [1.0, 4.0], "alpha": [0.5, 0.5],
                  "q": [[0.0, 1.0], [1.0, 0.0]]},
        "horizon": {"T": 0.1, "r": 0.0},
        "sim": {"dt": 1e-2, "n_particles": 500, "checkpoints": [0.1], "seed": 5},
        "initial": {"kind": "point", "x": 0.0},
        "output_dir": str(tmp_path / "sim"),
    }
    if extra:
        cfg.update(extra)
    path = tmp_path / "sim.json"
    path.write_text(json.dumps(cfg))
    return path


class TestCheckC:
    def test_grid_satisfied(self, tmp_path):
        out = tmp_path / "points.csv"
        code = cli.main(["check-c", "--lambda", "1,2,3,5,10",
                         "--method", "grid", "--n", "60", "--out", str(out)])
        assert code == 0
        rows = out.read_text().splitlines()
        assert rows[0] == "x,y"
        assert len(rows) > 1

    def test_d3_not_satisfied(self):
        assert cli.main(["check-c", "--lambda", "1,100,10000", "--method", "d3"]) == 1

    def test_identity_d2(self):
        assert cli.main(["check-c", "--lambda", "1,1", "--method", "identity"]) == 0

    def test_grid_empty_set_for_d3_reports_exact_answer(self, tmp_path):
        out = tmp_path / "p.csv"
        code = cli.main(["check-c", "--lambda", "1,100,10000",
                         "--method", "grid", "--n", "50", "--out", str(out)])
        assert code == 1

    def test_diag_method(self):
        code = cli.main(["check-c", "--lambda", "1,2,4", "--method", "diag",
                         "--alpha", "4.1213,1.9428,4.1213"])
        assert code == 0
        assert cli.main(["check-c", "--lambda", "1,2,4", "--method", "diag"]) == 2

    def test_gamma_method(self, tmp_path):
        gfile = tmp_path / "gamma.json"
        gfile.write_text(json.dumps(np.eye(2).tolist()))
        assert cli.main(["check-c", "--lambda", "1,9", "--method", "gamma",
                         "--gamma", str(gfile)]) == 0

    def test_invalid_lambda(self):
        assert cli.main(["check-c", "--lambda", "1,-2", "--method", "identity"]) == 2


class TestSolveCommands:
    def test_solve_fbm_outputs(self, tmp_path):
        cfg = small_solve_config(tmp_path)
        assert cli.main(["solve-fbm", str(cfg)]) == 0
        out = tmp_path / "out"
        meta = json.loads((out / "fbm_metadata.json").read_text())
        assert meta["diagnostics"]["heat_l1_max"] <= 5e-3
        assert len(meta["snapshots"]) == 3
        snap = (out / meta["snapshots"][-1]["file"]).read_text().splitlines()
        assert snap[0] == "x,p_1,p_2,sum,heat_ref"

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = small_solve_config(tmp_path)
        assert cli.main(["solve-fbm", str(cfg)]) == 0
        first = (tmp_path / "out" / "fbm_0002.csv").read_bytes()
        assert cli.main(["solve-fbm", str(cfg)]) == 0
        assert (tmp_path / "out" / "fbm_0002.csv").read_bytes() == first

    def test_solve_lv_needs_surface(self, tmp_path):
        cfg = small_solve_config(tmp_path)
        assert cli.main(["solve-lv", str(cfg)]) == 2

    def test_solve_lv_with_surface(self, tmp_path):
        cfg = small_solve_config(tmp_path, extra={
            "surface": {"kind": "constant", "value": 0.4}})
        assert cli.main(["solve-lv", str(cfg)]) == 0

    def test_missing_config(self):
        assert cli.main(["solve-fbm", "no-such-file.json"]) == 2

    def test_invalid_model_section(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"model": {"lambda": [1.0], "alpha": [1.0]},
                                    "horizon": {"T": 1.0},
                                    "grid": {"L": 5.0, "m": 101},
                                    "pds": {"dt": 1e-3}}))
        assert cli.main(["solve-fbm", str(path)]) == 2


class TestSimulateCommands:
    def test_simulate_fbm_outputs(self, tmp_path):
        cfg = small_sim_config(tmp_path)
        assert cli.main(["simulate-fbm", str(cfg)]) == 0
        out = tmp_path / "sim"
        rows = (out / "checkpoint_00.csv").read_text().splitlines()
        assert rows[0] == "particle_id,X,Y,qv"
        assert len(rows) == 501
        diag = json.loads((out / "simulate_fake_bm_diagnostics.json").read_text())
        assert diag["n_particles"] == 500

    def test_simulate_rerun_identical_rows(self, tmp_path):
        cfg = small_sim_config(tmp_path)
        assert cli.main(["simulate-jump", str(cfg)]) == 0
        first = (tmp_path / "sim" / "checkpoint_00.csv").read_bytes()
        assert cli.main(["simulate-jump", str(cfg)]) == 0
        assert (tmp_path / "sim" / "checkpoint_00.csv").read_bytes() == first

    def test_simulate_rslv_prices(self, tmp_path):
        cfg = small_sim_config(tmp_path, extra={
            "surface": {"kind": "constant", "value": 0.2},
            "strikes": [0.9, 1.0, 1.1]})
        assert cli.main(["simulate-rslv", str(cfg)]) == 0
        rows = (tmp_path / "sim" / "prices.csv").read_text().splitlines()
        assert rows[0] == "K,price,stderr"
        assert len(rows) == 4

    def test_jump_step_bound_is_a_config_error(self, tmp_path):
        cfg = small_sim_config(tmp_path)
        data = json.loads(cfg.read_text())
        data["model"]["q"] = [[0.0, 200.0], [200.0, 0.0]]
        cfg.write_text(json.dumps(data))
        assert cli.main(["simulate-jump", str(cfg)]) == 2


class TestDupireBuild:
    def test_build_from_csv(self, tmp_path):
        ts = np.arange(0.25, 0.8601, 0.02)
        ks = np.arange(0.85, 1.1801, 0.02)
        T, K = np.meshgrid(ts, ks, indexing="ij")
        d1 = (np.log(1.0 / K) + 0.02 * T) / (0.2 * np.sqrt(T))
        c = normal_cdf(d1) - K * normal_cdf(d1 - 0.2 * np.sqrt(T))
        calls = tmp_path / "calls.csv"
        with open(calls, "w") as fh:
            fh.write("t,K,C\n")
            for i in range(ts.size):
                for j in range(ks.size):
                    fh.write(f"{ts[i]:.10g},{ks[j]:.10g},{c[i, j]:.17g}\n")
        out = tmp_path / "surface.json"
        assert cli.main(["dupire-build", str(calls), "--r", "0", "--out", str(out)]) == 0
        surf = json.loads(out.read_text())
        inner = np.asarray(surf["values"])[1:-1]
        assert np.abs(inner - 0.2).max() <= 0.01

    def test_missing_file(self, tmp_path):
        assert cli.main(["dupire-build", str(tmp_path / "nope.csv")]) == 2


class TestVerify:
    def test_single_fast_criterion(self, capsys):
        assert cli.main(["verify", "--criteria", "3"]) == 0
        out = capsys.readouterr().out
        assert "[PASS] c03" in out

    def test_unknown_suite(self):
        assert cli.main(["verify", "--suite", "nonsense"]) == 2

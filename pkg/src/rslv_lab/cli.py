"""Command-line entry point binding the laboratory into reproducible runs.

Subcommands: check-c, solve-fbm, solve-rslv, solve-lv, solve-jump,
simulate-fbm, simulate-rslv, simulate-jump, dupire-build, verify.
Exit codes: 0 success / satisfied; 1 not satisfied, not found or failed
verification; 2 invalid input or configuration; 3 numerical failure.
RSLV_LAB_THREADS caps the internal worker count.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from .condition_c import (CertificateError, criterion_d3, criterion_diag,
                          criterion_identity, grid_search_diag,
                          satisfies_condition_c)
from .dupire import ArbitrageError, VolSurface, dupire_from_calls
from .fokker_planck import (NumericalError, PDSConfig, SpatialGrid,
                            l1_grid_distance, solve_fbm, solve_jump_fbm,
                            solve_lv, solve_rslv, write_snapshots)
from .particles import SimPlan, price_calls, simulate
from .regime_model import HorizonConfig, Measure, RegimeModel

__all__ = ["main", "ConfigError"]

_FLOAT_FMT = "%.17g"


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""


def _load_config(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc


def _require(cfg: dict, key: str, kind=dict):
    if key not in cfg:
        raise ConfigError(f"config is missing the {key!r} section")
    value = cfg[key]
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(f"config section {key!r} must be a {kind.__name__}")
    return value


def _model_from(cfg: dict) -> RegimeModel:
    try:
        return RegimeModel.from_dict(_require(cfg, "model"))
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"invalid model: {exc}") from exc


def _horizon_from(cfg: dict) -> HorizonConfig:
    raw = _require(cfg, "horizon")
    try:
        return HorizonConfig(T=float(raw["T"]), r=float(raw.get("r", 0.0)))
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"invalid horizon: {exc}") from exc


def _grid_from(cfg: dict) -> SpatialGrid:
    raw = _require(cfg, "grid")
    try:
        return SpatialGrid(L=float(raw["L"]), m=int(raw["m"]))
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"invalid grid: {exc}") from exc


def _pds_from(cfg: dict) -> PDSConfig:
    raw = _require(cfg, "pds")
    try:
        return PDSConfig(
            dt=float(raw["dt"]),
            eps_reg=None if raw.get("eps_reg") is None else float(raw["eps_reg"]),
            sigma_mollify=float(raw.get("sigma_mollify", 0.0)),
            mass_lumping=bool(raw.get("mass_lumping", False)),
            n_outputs=int(raw.get("n_outputs", 11)),
            output_times=None if raw.get("output_times") is None
            else tuple(float(t) for t in raw["output_times"]),
        )
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"invalid pds section: {exc}") from exc


def _plan_from(cfg: dict, mode: str) -> SimPlan:
    raw = _require(cfg, "sim")
    try:
        return SimPlan(
            dt=float(raw["dt"]),
            n_particles=int(raw["n_particles"]),
            mode=mode,
            bandwidth_c=float(raw.get("bandwidth_c", 1.06)),
            regression_grid=int(raw.get("regression_grid", 400)),
            checkpoints=tuple(float(t) for t in raw.get("checkpoints", [1.0])),
            seed=int(raw.get("seed", cfg.get("seed", 0))),
        )
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"invalid sim section: {exc}") from exc


def _initial_from(cfg: dict) -> Measure:
    raw = cfg.get("initial", {"kind": "point", "x": 0.0})
    try:
        return Measure.from_dict(raw)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"invalid initial measure: {exc}") from exc


def _surface_from(cfg: dict, base: str) -> VolSurface:
    raw = _require(cfg, "surface")
    try:
        if "file" in raw:
            path = raw["file"]
            if not os.path.isabs(path):
                path = os.path.join(base, path)
            return VolSurface.load(path)
        return VolSurface.from_dict(raw)
    except (ValueError, KeyError, OSError) as exc:
        raise ConfigError(f"invalid surface: {exc}") from exc


def _out_dir(cfg: dict, args) -> str:
    out = args.out or cfg.get("output_dir") or "out"
    os.makedirs(out, exist_ok=True)
    return out


def _write_csv(path: str, header: str, rows) -> None:
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_FLOAT_FMT % v for v in row) + "\n")


# ---------------------------------------------------------------------------
# check-c

def _cmd_check_c(args) -> int:
    try:
        lam = np.array([float(v) for v in args.lam.split(",")])
        if lam.size < 2 or np.any(lam <= 0):
            raise ValueError("need at least two positive values")
    except ValueError as exc:
        print(f"error: invalid --lambda: {exc}", file=sys.stderr)
        return 2
    alpha = np.full(lam.size, 1.0 / lam.size)
    model = RegimeModel(lam=lam, alpha=alpha)
    method = args.method

    if method == "d3":
        if lam.size != 3:
            print("error: --method d3 needs exactly three values", file=sys.stderr)
            return 2
        rep = criterion_d3(lam)
        print(f"d3 criterion: lhs = {rep.lhs:.6g} vs 1/4 -> "
              + ("SATISFIED" if rep.satisfied else "NOT-SATISFIED"))
        return 0 if rep.satisfied else 1

    if method == "identity":
        ok = criterion_identity(model)
        print("identity criterion: " + ("SATISFIED" if ok else
                                        "NOT-SATISFIED (sufficient test only)"))
        return 0 if ok else 1

    if method == "diag":
        if not args.alpha:
            print("error: --method diag needs --alpha", file=sys.stderr)
            return 2
        try:
            diag = np.array([float(v) for v in args.alpha.split(",")])
        except ValueError as exc:
            print(f"error: invalid --alpha: {exc}", file=sys.stderr)
            return 2
        try:
            ok = criterion_diag(model, diag)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print("diagonal criterion: " + ("SATISFIED" if ok else "NOT-SATISFIED"))
        return 0 if ok else 1

    if method == "gamma":
        if not args.gamma:
            print("error: --method gamma needs --gamma file.json", file=sys.stderr)
            return 2
        try:
            with open(args.gamma) as fh:
                gamma = np.asarray(json.load(fh), dtype=float)
            ok = satisfies_condition_c(gamma, model)
        except (OSError, ValueError, json.JSONDecodeError) as exc:
            print(f"error: invalid gamma matrix: {exc}", file=sys.stderr)
            return 2
        print("supplied gamma: " + ("SATISFIED" if ok else "NOT-SATISFIED"))
        return 0 if ok else 1

    # grid method
    if lam.size < 3:
        ok = criterion_identity(model)
        print("grid method on d=2 delegates to the identity criterion: "
              + ("SATISFIED" if ok else "NOT-SATISFIED"))
        return 0 if ok else 1
    report = grid_search_diag(model, args.n)
    out = args.out or "points.csv"
    _write_csv(out, "x,y", report.points)
    if report.fallback:
        verdict = "SATISFIED" if report.satisfied else "NOT-SATISFIED"
        print(f"degenerate multiset, decided by {report.fallback}: {verdict}")
        return 0 if report.satisfied else 1
    if report.satisfied:
        print(f"SATISFIED: {report.points.shape[0]} passing points at n={args.n} -> {out}")
        return 0
    # finite-resolution search cannot disprove Condition (C) for d >= 4
    if lam.size == 3:
        rep = criterion_d3(lam)
        verdict = "SATISFIED" if rep.satisfied else "NOT-SATISFIED"
        print(f"NOT-FOUND(n={args.n}); exact d=3 criterion says {verdict}")
        return 0 if rep.satisfied else 1
    print(f"NOT-FOUND(n={args.n}): no passing point at this resolution "
          "(not a disproof)")
    return 1


# ---------------------------------------------------------------------------
# PDE solves

def _heat_reference(initial: Measure, sigma: float):
    def ref(t: float, x: np.ndarray) -> np.ndarray:
        w = math.sqrt(sigma * sigma + t) if t > 0 or sigma > 0 else 0.0
        if w == 0.0:
            return np.zeros_like(x)
        return initial.density_on(x, w)
    return ref


def _cmd_solve(args, kind: str) -> int:
    cfg = _load_config(args.config)
    model = _model_from(cfg) if kind != "lv" else None
    horizon = _horizon_from(cfg)
    grid = _grid_from(cfg)
    pds = _pds_from(cfg)
    initial = _initial_from(cfg)
    out = _out_dir(cfg, args)
    base = os.path.dirname(os.path.abspath(args.config))

    if kind == "fbm":
        sol = solve_fbm(model, pds, grid, horizon, initial)
    elif kind == "jump":
        sol = solve_jump_fbm(model, pds, grid, horizon, initial)
    elif kind == "rslv":
        surface = _surface_from(cfg, base)
        sol = solve_rslv(model, pds, grid, horizon, surface, initial)
    else:
        surface = _surface_from(cfg, base)
        sol = solve_lv(pds, grid, horizon, surface, initial)

    ref = _heat_reference(initial, pds.sigma_mollify)
    meta = write_snapshots(sol, out, reference=ref, prefix=f"{kind}")
    if kind in ("fbm", "jump"):
        errs = [l1_grid_distance(grid, sol.total_density(k), ref(float(t), grid.x))
                for k, t in enumerate(sol.times) if t > 0]
        meta["diagnostics"]["heat_l1_max"] = max(errs) if errs else 0.0
    meta["run"] = {"command": f"solve-{kind}", "config": os.path.abspath(args.config),
                   "config_data": cfg,
                   "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S")}
    with open(os.path.join(out, f"{kind}_metadata.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
    print(f"wrote {len(sol.times)} snapshots to {out} "
          f"(mass drift {sol.diagnostics.max_mass_drift:.3g}, "
          f"min value {sol.diagnostics.min_value.min():.3g})")
    return 0


# ---------------------------------------------------------------------------
# particle simulations

def _cmd_simulate(args, mode: str) -> int:
    cfg = _load_config(args.config)
    model = _model_from(cfg)
    horizon = _horizon_from(cfg)
    plan = _plan_from(cfg, mode)
    initial = _initial_from(cfg)
    out = _out_dir(cfg, args)
    base = os.path.dirname(os.path.abspath(args.config))
    surface = _surface_from(cfg, base) if mode == "rslv" else None
    try:
        plan.validate(model)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    res = simulate(model, plan, horizon, initial=initial, surface=surface)
    for k, t in enumerate(res.times):
        rows = zip(range(res.X.shape[1]), res.X[k], res.Y[k], res.qv[k])
        _write_csv(os.path.join(out, f"checkpoint_{k:02d}.csv"),
                   "particle_id,X,Y,qv", rows)
    diag = {
        "mode": mode,
        "times": res.times.tolist(),
        "occupancy": res.occupancy.tolist(),
        "gyongy_ratio_min": float(res.gyongy_ratio.min()),
        "gyongy_ratio_max": float(res.gyongy_ratio.max()),
        "qv_T_mean": float(res.qv[-1].mean()),
        "qv_T_std": float(res.qv[-1].std()),
        "seed": plan.seed,
        "n_particles": plan.n_particles,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    if mode == "rslv" and cfg.get("strikes"):
        prices = price_calls(res.X[-1], cfg["strikes"], r=horizon.r, T=horizon.T)
        _write_csv(os.path.join(out, "prices.csv"), "K,price,stderr", prices)
        diag["prices_file"] = "prices.csv"
    with open(os.path.join(out, f"simulate_{mode}_diagnostics.json"), "w") as fh:
        json.dump(diag, fh, indent=2)
    print(f"wrote {len(res.times)} checkpoints to {out} "
          f"(gyongy ratio in [{diag['gyongy_ratio_min']:.5f}, "
          f"{diag['gyongy_ratio_max']:.5f}])")
    return 0


# ---------------------------------------------------------------------------
# dupire-build

def _cmd_dupire(args) -> int:
    try:
        raw = np.genfromtxt(args.calls, delimiter=",", names=True)
        ts = np.unique(raw["t"])
        ks = np.unique(raw["K"])
        grid = np.full((ts.size, ks.size), np.nan)
        ti = np.searchsorted(ts, raw["t"])
        kj = np.searchsorted(ks, raw["K"])
        grid[ti, kj] = raw["C"]
        if np.any(~np.isfinite(grid)):
            raise ConfigError("call grid is not rectangular (missing (t, K) pairs)")
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read call grid: {exc}") from exc
    report = dupire_from_calls(ts, ks, grid, r=args.r,
                               sigma_low=args.sigma_low, sigma_high=args.sigma_high)
    report.surface.save(args.out)
    print(f"wrote surface to {args.out} "
          f"({len(report.flagged)}/{report.n_total} nodes repaired)")
    return 0


# ---------------------------------------------------------------------------
# verify

def _cmd_verify(args) -> int:
    from . import acceptance
    if args.criteria:
        names = []
        for token in args.criteria.split(","):
            token = token.strip()
            name = token if token.startswith("c") else f"c{int(token):02d}"
            names.append(name)
    else:
        if args.suite not in acceptance.SUITES:
            print(f"error: unknown suite {args.suite!r} "
                  f"(choose from {sorted(acceptance.SUITES)})", file=sys.stderr)
            return 2
        names = acceptance.SUITES[args.suite]
    results = acceptance.run_criteria(names)
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} criteria passed")
    return 0 if n_fail == 0 else 1


# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rslv-lab",
        description="Regime-switching local-volatility laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    pc = sub.add_parser("check-c", help="decide Condition (C) for a lambda family")
    pc.add_argument("--lambda", dest="lam", required=True,
                    help="comma-separated positive variance levels")
    pc.add_argument("--method", choices=["d3", "identity", "diag", "grid", "gamma"],
                    default="grid")
    pc.add_argument("--n", type=int, default=200, help="grid resolution")
    pc.add_argument("--gamma", help="JSON file with a candidate matrix")
    pc.add_argument("--alpha", help="comma-separated diagonal for --method diag")
    pc.add_argument("--out", help="CSV output for grid points")

    for kind in ("fbm", "rslv", "lv", "jump"):
        ps = sub.add_parser(f"solve-{kind}", help=f"grid solve of the {kind} system")
        ps.add_argument("config", help="experiment config JSON")
        ps.add_argument("--out", help="output directory")

    for mode in ("fbm", "rslv", "jump"):
        pm = sub.add_parser(f"simulate-{mode}", help=f"particle run in {mode} mode")
        pm.add_argument("config", help="experiment config JSON")
        pm.add_argument("--out", help="output directory")

    pd = sub.add_parser("dupire-build", help="build a surface from call prices")
    pd.add_argument("calls", help="CSV with header t,K,C")
    pd.add_argument("--r", type=float, default=0.0)
    pd.add_argument("--sigma-low", type=float, default=0.01)
    pd.add_argument("--sigma-high", type=float, default=2.0)
    pd.add_argument("--out", default="surface.json")

    pv = sub.add_parser("verify", help="run the acceptance criteria")
    pv.add_argument("--suite", default="all")
    pv.add_argument("--criteria", help="comma-separated criterion ids, e.g. 3,5")
    return parser


_MODE_BY_COMMAND = {"simulate-fbm": "fake_bm", "simulate-rslv": "rslv",
                    "simulate-jump": "jump_fbm"}


def main(argv=None) -> int:
    workers = os.environ.get("RSLV_LAB_THREADS")
    if workers is not None:
        # cap BLAS pools too so one command never oversubscribes the host
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, workers)
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "check-c":
            return _cmd_check_c(args)
        if args.command.startswith("solve-"):
            return _cmd_solve(args, args.command.split("-", 1)[1])
        if args.command in _MODE_BY_COMMAND:
            return _cmd_simulate(args, _MODE_BY_COMMAND[args.command])
        if args.command == "dupire-build":
            return _cmd_dupire(args)
        if args.command == "verify":
            return _cmd_verify(args)
        parser.error(f"unknown command {args.command}")
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ArbitrageError, CertificateError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

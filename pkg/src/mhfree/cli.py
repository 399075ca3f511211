"""Command-line front end: ``mhfree {solve,verify,simulate,price,reproduce}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import closedform
from .config import ConfigError, RunConfig, load_config
from .distortions import identity
from .distributions import exponential
from .objective import GridSpec, RateSolution, drift_volatility, hjb_residual, solve_rate
from .premium import (AssumptionError, MarketParams, PremiumMismatch, check_assumption, dual_cdf,
                      premium_rate)
from .retention import InadmissibleContract, RetentionFunction, from_indemnity, stop_loss
from .simulate import simulate_ruin, write_paths_csv
from .solver.qp import SolverError
from .solver.quantile import AssumptionViolation
from .solver.verify import PhiMismatch, phi_eval, verify_condition_I, verify_oide

log = logging.getLogger("mhfree")

EXIT_OK, EXIT_FAILED, EXIT_ASSUMPTION, EXIT_SOLVER, EXIT_INADMISSIBLE, EXIT_CONFIG = 0, 1, 2, 3, 4, 5


class CheckFailed(RuntimeError):
    """A cross-check or reproduction did not meet its tolerance."""


# -- io helpers ----------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else repr(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def _write_json(out: Path, name: str, data: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def _write_curve(out: Path, z, H: RetentionFunction, phi) -> None:
    out.mkdir(parents=True, exist_ok=True)
    h = np.asarray(H(z), dtype=float)
    with open(out / "contract.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["z", "H", "I", "Phi"])
        for row in zip(z, h, np.asarray(z) - h, phi):
            w.writerow([repr(float(v)) for v in row])


def read_contract(path) -> RetentionFunction:
    """CSV with header ``z,value``; ``value`` is the indemnity ``I(z)``."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InadmissibleContract(f"cannot read contract {path}: {exc}") from exc
    if not rows or [c.strip().lower() for c in rows[0][:2]] != ["z", "value"]:
        raise InadmissibleContract("contract CSV must start with the header 'z,value'")
    try:
        data = np.array([[float(r[0]), float(r[1])] for r in rows[1:] if r], dtype=float)
    except (ValueError, IndexError) as exc:
        raise InadmissibleContract(f"non-numeric contract row: {exc}") from exc
    if data.size == 0:
        raise InadmissibleContract("contract has no rows")
    return from_indemnity(data[:, 0], data[:, 1])


# -- workflows -----------------------------------------------------------------

def _solve(cfg: RunConfig, route: Optional[str] = None) -> tuple[RateSolution, object, object, MarketParams]:
    F, g, params = cfg.loss(), cfg.distortion_fn(), cfg.market_params()
    report = check_assumption(params, F, g)
    if not report.ok:
        raise AssumptionError(report.message)
    sol = solve_rate(params, F, g, cfg.grid_spec(), cfg.tol, route=route or cfg.route)
    return sol, F, g, params


def _compare_region(F, grid: np.ndarray) -> tuple[np.ndarray, float]:
    """Grid nodes up to the 0.999 quantile and the largest spacing among them."""
    top = float(F.quantile(0.999))
    z = grid[grid <= top]
    return z, float(np.diff(z).max(initial=0.0))


def run_solve(cfg: RunConfig, out: Path, paranoid: bool = False) -> dict:
    sol, F, g, params = _solve(cfg)
    H = sol.H_star
    z = sol.problem.grid
    phi = phi_eval(H, sol.a_star, F, sol.dual, z).values
    mu, s2 = drift_volatility(H, params, F, g, sol.dual)
    quote = premium_rate(H, F, g, params.theta0, sol.dual)
    summary = {
        "route": sol.route,
        "a_star": sol.a_star,
        "v_at_a_star": sol.v_at_a_star,
        "target": sol.target,
        "theta": sol.theta,
        "mu": mu,
        "sigma2": s2,
        "hjb_residual": 0.5 * sol.a_star * s2 - mu,
        "premium": quote.direct,
        "premium_dual": quote.dual,
        "bracket": list(sol.bracket),
        "grid_nodes": int(z.size),
    }
    if paranoid:
        summary["cross_check"] = _cross_check(cfg, sol, F)
    _write_json(out, "summary.json", summary)
    _write_curve(out, z, H, phi)
    return summary


def _cross_check(cfg: RunConfig, sol: RateSolution, F) -> dict:
    if not F.has_quantile_density:
        return {"skipped": "loss law has no quantile density; only the slope program applies"}
    other_route = "ode" if sol.route == "qp" else "qp"
    other, *_ = _solve(cfg, other_route)
    qp = sol if sol.route == "qp" else other
    z, spacing = _compare_region(F, qp.problem.grid)
    gap = float(np.abs(sol.H_star(z) - other.H_star(z)).max())
    rel = abs(sol.a_star - other.a_star) / sol.a_star
    res = {"other_route": other_route, "a_star_other": other.a_star, "a_star_rel_gap": rel,
           "H_sup_gap": gap, "max_spacing": spacing, "passed": gap <= 2 * spacing and rel <= 1e-3}
    if not res["passed"]:
        raise CheckFailed(f"routes disagree: sup|H_qp - H_ode| = {gap:.3e}, a* gap {rel:.3e}")
    return res


def run_verify(cfg: RunConfig, contract: Path, out: Path, seed: int = 0) -> dict:
    H = read_contract(contract)
    sol, F, g, params = _solve(cfg)
    a = sol.a_star
    dual = sol.dual
    grid = np.union1d(H.grid, sol.problem.grid)
    Hg = H.refine(grid)
    cond = verify_condition_I(Hg, a, F, dual, n_directions=1000, seed=seed,
                              scale=1.0 + abs(sol.target))
    oide = verify_oide(Hg, a, F, dual)
    resid = hjb_residual(H, a, params, F, g, dual)
    mu, s2 = drift_volatility(H, params, F, g, dual)
    passed = cond.passed and oide.passed
    report = {
        "a_star": a,
        "passed": passed,
        "condition_I": {"min_value": cond.min_value, "worst_direction": cond.worst,
                        "tol": cond.tol, "passed": cond.passed, "n_checked": cond.n_checked},
        "oide": {"max_violation": oide.max_violation, "passed": oide.passed,
                 "violations": oide.violations[:20], "n_violations": len(oide.violations),
                 "nonunique": oide.nonunique_flag, "note": oide.note},
        "hjb_residual": resid,
        "hjb_relative": resid / max(abs(mu), 0.5 * a * s2, 1e-300),
    }
    _write_json(out, "summary.json", report)
    return report


def run_price(cfg: RunConfig, contract: Path, out: Path) -> dict:
    H = read_contract(contract)
    F, g, params = cfg.loss(), cfg.distortion_fn(), cfg.market_params()
    dual = dual_cdf(F, g, params.theta0)
    q = premium_rate(H, F, g, params.theta0, dual)
    res = {"premium": q.direct, "premium_dual": q.dual, "relative_gap": q.rel_gap}
    _write_json(out, "summary.json", res)
    return res


def run_simulate(cfg: RunConfig, out: Path, contract: Optional[Path], seed: Optional[int],
                 keep_paths: bool) -> dict:
    sim = cfg.sim_config(seed, keep_paths)
    F, g, params = cfg.loss(), cfg.distortion_fn(), cfg.market_params()
    a_star = None
    if contract is not None:
        H = read_contract(contract)
    else:
        sol, *_ = _solve(cfg)
        H, a_star = sol.H_star, sol.a_star
    rep = simulate_ruin(H, params, F, g, sim, a_star)
    summary = rep.summary()
    summary.update({"x": sim.x, "T": sim.T, "dt": sim.dt, "seed": sim.seed, "bridge": sim.bridge})
    _write_json(out, "summary.json", summary)
    if sim.keep_paths:
        write_paths_csv(rep, out / "paths.csv")
    return summary


def run_reproduce_layer(out: Path, n_nodes: int = 2000) -> dict:
    b = closedform.multilayer_case(GridSpec(n_nodes=n_nodes), strict=False)
    pts = np.array(closedform.LAYER_POINTS)
    summary = {
        "a_star": b.a_star,
        "pi": b.pi,
        "V1": b.V1,
        "indemnity_at": {f"{p:g}": float(p - b.H_star(p)) for p in pts},
        "indemnity_expected": {f"{p:g}": float(closedform.layer_indemnity(p)) for p in pts},
        "checks": b.checks,
        "passed": b.passed,
    }
    _write_json(out, "summary.json", summary)
    _write_curve(out, b.z, b.H_star, b.phi)
    if not b.passed:
        raise CheckFailed("layer reproduction failed: " + ", ".join(k for k, v in b.checks.items() if not v))
    return summary


def run_reproduce_stoploss(cfg: Optional[RunConfig], out: Path) -> dict:
    if cfg is None:
        F, params, gspec = exponential(1.0), MarketParams(1.5, 1.0), GridSpec()
    else:
        F, params, gspec = cfg.loss(), cfg.market_params(), cfg.grid_spec()
        if not cfg.distortion_fn().is_identity:
            raise AssumptionError("the stop-loss reproduction needs the identity distortion")
    d, a_formula = closedform.no_distortion_deductible(F, params.theta0, params.pi)
    cert = closedform.stoploss_check(d, params, F, identity())
    sol = solve_rate(params, F, identity(), gspec)
    z, spacing = _compare_region(F, sol.problem.grid)
    err = float(np.abs(sol.H_star(z) - stop_loss(d)(z)).max())
    rel = abs(sol.a_star - a_formula) / a_formula
    passed = cert.passed and rel <= 1e-4 and err <= 2 * spacing
    summary = {"d_star": d, "a_star_formula": a_formula, "a_star_solver": sol.a_star,
               "a_star_rel_gap": rel, "H_sup_error": err, "max_spacing": spacing,
               "certificate": {"passed": cert.passed, "lower_margin": cert.lower_margin,
                               "upper_margin": cert.upper_margin, "a_star": cert.a_star},
               "passed": passed}
    _write_json(out, "summary.json", summary)
    phi = phi_eval(sol.H_star, sol.a_star, F, sol.dual, sol.problem.grid).values
    _write_curve(out, sol.problem.grid, sol.H_star, phi)
    if not passed:
        raise CheckFailed("stop-loss reproduction failed")
    return summary


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mhfree", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
    common.add_argument("--paranoid", action="store_true", help="run both routes and cross-check")
    common.add_argument("--seed", type=int, help="seed for simulation and random directions")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="optimal contract and decay rate")
    v = sub.add_parser("verify", parents=[common], help="optimality report for a contract CSV")
    v.add_argument("--contract", type=Path, required=True)
    pr = sub.add_parser("price", parents=[common], help="premium of a contract CSV")
    pr.add_argument("--contract", type=Path, required=True)
    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo ruin estimate")
    s.add_argument("--contract", type=Path, help="contract CSV (default: the solved optimum)")
    s.add_argument("--paths", action="store_true", help="also write paths.csv")
    r = sub.add_parser("reproduce", parents=[common], help="known closed-form cases")
    r.add_argument("case", choices=["layer", "stoploss"])
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else None
        if cfg is None and args.command != "reproduce":
            raise ConfigError("--config is required for this command")
        out = args.out or (cfg.out_dir if cfg else Path("out"))
        if args.command == "solve":
            res = run_solve(cfg, out, args.paranoid)
        elif args.command == "verify":
            res = run_verify(cfg, args.contract, out, args.seed or 0)
        elif args.command == "price":
            res = run_price(cfg, args.contract, out)
        elif args.command == "simulate":
            res = run_simulate(cfg, out, args.contract, args.seed, args.paths)
        elif args.case == "layer":
            res = run_reproduce_layer(out)
        else:
            res = run_reproduce_stoploss(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AssumptionError, AssumptionViolation) as exc:
        print(f"assumption violated: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except InadmissibleContract as exc:
        print(f"inadmissible contract: {exc}", file=sys.stderr)
        return EXIT_INADMISSIBLE
    except (SolverError, PhiMismatch, PremiumMismatch, CheckFailed) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(json.dumps(_jsonable(res), indent=2, sort_keys=True))
    if args.command == "verify" and not res["passed"]:
        return EXIT_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

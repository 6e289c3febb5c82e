"""``volterra-lq`` command-line front end.

Exit codes: 0 success, 1 usage or configuration error, 2 solver regularity
failure, 3 validation failure.

Config schema 1 (JSON)::

    {
      "schema": 1,
      "problem": {...} | "problem.json",
      "grid": {"N": 8},
      "solver": {"method": "dp"} | {"method": "picard", "tol": 1e-10, "max_iter": 50},
      "simulate": {"driver": "gaussian", "paths": 10000, "seed": 0,
                   "exhaustive": false, "per_path_csv": false, "solution": "riccati.json"},
      "oracle": {"enabled": true, "max_depth": 12},
      "outputs": {"dir": "out", "formats": ["json", "csv"]}
    }

The ``problem`` block holds ``n, m, t0, T``, kernels ``A, B, C, D`` (each a
number, a matrix, or ``{"kind": ...}``), weights ``Q, R`` (constant or
``{"kind": "tabulated", "times", "values"}``), terminal ``G`` and
``free_path`` (``{"times", "values"}`` or a constant).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import oracle as orc
from .errors import (ConvergenceError, ConvexityError, H4ViolationError, RegularityError,
                     SimulationError, SpecError, VolterraLQError)
from .grid import build_grid, discretize_path, sample_spec
from .model import ProblemSpec, validate_spec
from .riccati import (RiccatiSolution, build_lifted, picard_solve, solve_dp, solve_problem,
                      value_at)
from .sde_reduce import compare_with_volterra, constant_coefficients, integrate_riccati_ode
from .simulate import NoiseDriver, simulate_closed_loop

log = logging.getLogger("volterra_lq")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_REGULARITY, EXIT_VALIDATION = 0, 1, 2, 3


class UsageError(VolterraLQError):
    pass


@dataclass
class RunConfig:
    problem: ProblemSpec
    N: int
    solver: dict = field(default_factory=lambda: {"method": "dp"})
    simulate: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    @property
    def formats(self):
        return set(self.outputs.get("formats", ["json", "csv"]))

    def out_dir(self, override=None) -> Path:
        if override is not None:
            return Path(override)
        return self.base_dir / self.outputs.get("dir", "out")


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file {path} does not exist")
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: "
                         f"{exc.msg}") from None
    return parse_config(data, base_dir=path.parent)


def parse_config(data, base_dir=Path(".")) -> RunConfig:
    if not isinstance(data, dict):
        raise UsageError("config must be a JSON object")
    if data.get("schema") != SCHEMA_VERSION:
        raise UsageError(f"unsupported config schema {data.get('schema')!r}; "
                         f"expected {SCHEMA_VERSION}")
    prob = data.get("problem")
    if isinstance(prob, str):
        ppath = Path(base_dir) / prob
        if not ppath.exists():
            raise UsageError(f"problem file {ppath} does not exist")
        try:
            prob = json.loads(ppath.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{ppath}: malformed JSON at line {exc.lineno}, "
                             f"column {exc.colno}: {exc.msg}") from None
    if not isinstance(prob, dict):
        raise UsageError("config needs a 'problem' object or file name")
    try:
        problem = ProblemSpec.from_dict(prob)
    except (TypeError, ValueError, KeyError, AttributeError) as exc:
        raise UsageError(f"invalid problem: {exc!r}") from None
    N = data.get("grid", {}).get("N")
    if not isinstance(N, int) or N < 1:
        raise UsageError(f"grid.N must be an integer >= 1, got {N!r}")
    cfg = RunConfig(problem=problem, N=N,
                    solver=dict(data.get("solver", {"method": "dp"})),
                    simulate=dict(data.get("simulate", {})),
                    oracle=dict(data.get("oracle", {})),
                    outputs=dict(data.get("outputs", {})),
                    base_dir=Path(base_dir))
    if cfg.solver.get("method", "dp") not in ("dp", "picard"):
        raise UsageError(f"unknown solver {cfg.solver.get('method')!r}")
    if cfg.oracle.get("enabled") and N > min(int(cfg.oracle.get("max_depth", 12)),
                                             orc.MAX_DEPTH):
        raise UsageError(f"oracle needs N <= {min(cfg.oracle.get('max_depth', 12), 12)}, "
                         f"got N={N}")
    return cfg


def _dump_json(path: Path, payload):
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _solve(cfg: RunConfig):
    method = cfg.solver.get("method", "dp")
    if method == "picard":
        # the iteration's convergence theory needs the standard condition
        validate_spec(cfg.problem, "strict-H4")
    else:
        validate_spec(cfg.problem, "convex-only")
    return solve_problem(cfg.problem, cfg.N, method=method,
                         tol=float(cfg.solver.get("tol", 1e-10)),
                         max_iter=int(cfg.solver.get("max_iter", 50)))


def cmd_solve(cfg: RunConfig, out: Path, threads=1) -> int:
    grid, coeffs, lifted, sol, trace = _solve(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "riccati.json").write_text(sol.to_json() + "\n")
    chi0 = discretize_path(cfg.problem.free_path, grid, 0)
    summary = {"N": grid.N, "solver": cfg.solver.get("method", "dp"),
               "value_at_start": value_at(sol, 0, chi0),
               "regularity_margin": sol.regularity_margin}
    if trace is not None:
        summary["picard_iterations"] = trace.iterations
        summary["final_residual"] = trace.final_residual
        summary["min_monotonicity_margin"] = trace.min_monotonicity
    _dump_json(out / "summary.json", summary)
    if "csv" in cfg.formats:
        with open(out / "riccati_profile.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "s_k", "trace_P", "theta_norm"])
            for k in range(grid.N + 1):
                tn = repr(float(np.linalg.norm(sol.Theta[k], 2))) if k < grid.N else ""
                w.writerow([k, repr(float(grid.nodes[k])), repr(float(np.trace(sol.P[k]))), tn])
    log.info("value at start %.12g, regularity margin %.6g", summary["value_at_start"],
             sol.regularity_margin)
    return EXIT_OK


def _driver(cfg: RunConfig) -> NoiseDriver:
    sim = cfg.simulate
    exhaustive = bool(sim.get("exhaustive", False))
    kind = sim.get("driver", "two-point" if exhaustive else "gaussian")
    if exhaustive and cfg.N > orc.MAX_DEPTH:
        raise UsageError(f"exhaustive mode needs N <= {orc.MAX_DEPTH}, got {cfg.N}")
    try:
        return NoiseDriver(kind=kind, seed=int(sim.get("seed", 0)), exhaustive=exhaustive)
    except SpecError as exc:
        raise UsageError(str(exc)) from None


def cmd_simulate(cfg: RunConfig, out: Path, threads=1) -> int:
    sim = cfg.simulate
    driver = _driver(cfg)
    paths = sim.get("paths")
    if not driver.exhaustive and (not isinstance(paths, int) or paths < 1):
        raise UsageError(f"simulate.paths must be a positive integer, got {paths!r}")
    sol_file = sim.get("solution")
    if sol_file is not None:
        spath = cfg.base_dir / sol_file
        if not spath.exists():
            raise UsageError(f"solution file {spath} does not exist; run 'solve' first")
        sol = RiccatiSolution.from_json(spath.read_text())
        if sol.N != cfg.N or (sol.n, sol.m) != (cfg.problem.n, cfg.problem.m):
            raise UsageError(f"solution file {spath} does not match the configured problem")
        grid = build_grid(cfg.problem.t0, cfg.problem.T, cfg.N)
    else:
        grid, coeffs, lifted, sol, _ = _solve(cfg)
    report = simulate_closed_loop(cfg.problem, grid, sol, driver, paths, threads=threads,
                                  keep_costs=bool(sim.get("per_path_csv", False)))
    chi0 = discretize_path(cfg.problem.free_path, grid, 0)
    payload = report.to_dict()
    payload["driver"] = driver.kind
    payload["exhaustive"] = driver.exhaustive
    payload["seed"] = int(driver.seed)
    payload["value_at_start"] = value_at(sol, 0, chi0)
    payload["abs_gap"] = abs(payload["cost_mean"] - payload["value_at_start"])
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(out / "sim_report.json", payload)
    if report.costs is not None:
        report.write_costs_csv(out / "sim_paths.csv")
    return EXIT_OK


def _check(checks, name, value, threshold, passed=None, detail=None):
    if passed is None:
        passed = bool(np.isfinite(value) and value <= threshold)
    entry = {"name": name, "value": value, "threshold": threshold, "passed": bool(passed)}
    if detail:
        entry["detail"] = detail
    checks.append(entry)
    return passed


def run_validation(cfg: RunConfig) -> list:
    """Run the identity suite; returns a list of check records."""
    checks = []
    spec = cfg.problem
    h4 = validate_spec(spec, "strict-H4", raise_on_violation=False)
    _check(checks, "standard_condition_h4", -h4.min_R_eig, 0.0, passed=h4.ok,
           detail="; ".join(v.message for v in h4.violations) or None)

    grid = build_grid(spec.t0, spec.T, cfg.N)
    coeffs = sample_spec(spec, grid)
    lifted = build_lifted(coeffs, grid)
    chi0 = discretize_path(spec.free_path, grid, 0)
    tree = orc.ScenarioTree(cfg.N, grid.h)

    qp = None
    try:
        qp = orc.solve_adapted_qp(coeffs, tree, chi0)
        _check(checks, "qp_convexity", -qp.min_hessian_eig if qp.min_hessian_eig is not None
               else 0.0, 0.0, passed=True)
    except ConvexityError as exc:
        _check(checks, "qp_convexity", math.inf, 0.0, passed=False, detail=str(exc))

    sol = None
    try:
        sol = solve_dp(lifted, coeffs, grid)
        _check(checks, "riccati_regularity", -sol.regularity_margin, 0.0, passed=True)
    except RegularityError as exc:
        _check(checks, "riccati_regularity", math.inf, 0.0, passed=False, detail=str(exc))

    if sol is None or qp is None:
        return checks

    value = value_at(sol, 0, chi0)
    _check(checks, "qp_dp_value_agreement", abs(value - qp.value), 1e-8 * (1 + abs(value)))

    ctl = orc.feedback_on_tree(sol, lifted, tree, chi0)
    X = orc.forward_state(coeffs, tree, chi0, ctl)
    sysm = orc.solve_optimality_bsvies(coeffs, tree, X, ctl)
    st = orc.check_stationarity(sysm, coeffs, tree)
    for r in st.residuals:
        _check(checks, r.name, r.value, r.threshold, detail=f"argmax {r.argmax}")
    _check(checks, "m_solution_condition", orc.m_solution_residual(sysm, tree), 1e-12)
    _check(checks, "bsvie_equation", orc.equation_residual(sysm, tree), 1e-12)

    Xq = orc.forward_state(coeffs, tree, chi0, qp.control)
    sys_q = orc.solve_optimality_bsvies(coeffs, tree, Xq, qp.control)
    r = orc.check_stationarity(sys_q, coeffs, tree)["mp_stationarity"]
    _check(checks, "mp_stationarity_qp_control", r.value, r.threshold, detail=f"argmax {r.argmax}")

    chib = orc.forecasts(coeffs, tree, chi0, X, ctl)
    dual = orc.check_dual_representation(sysm, sol, tree, chib, coeffs)["dual_representation"]
    _check(checks, "dual_representation", dual.value, dual.threshold,
           detail=f"argmax {dual.argmax}")

    if h4.ok:
        try:
            psol, trace = picard_solve(lifted, coeffs, tol=1e-10, max_iter=60, grid=grid)
            _check(checks, "picard_monotonicity", max(0.0, -trace.min_monotonicity), 1e-10)
            _check(checks, "picard_convergence", trace.final_residual, 1e-8,
                   detail=f"{trace.iterations} iterations")
            gap = max(float(np.linalg.norm(a - b, 2)) for a, b in zip(psol.P, sol.P))
            _check(checks, "picard_dp_agreement", gap, 1e-7)
        except (ConvergenceError, RegularityError) as exc:
            _check(checks, "picard_convergence", math.inf, 1e-8, passed=False, detail=str(exc))

    if coeffs.control_free():
        n = spec.n
        worst = max(float(np.abs(t[:, n:]).max(initial=0.0)) for t in sol.Theta)
        _check(checks, "markovian_feedback_columns_zero", worst, 1e-12)

    exhaustive = simulate_closed_loop(spec, grid, sol, NoiseDriver("two-point", 0, True),
                                      lifted=lifted, coeffs=coeffs)
    _check(checks, "exhaustive_mc_matches_value", abs(exhaustive.cost_mean - value),
           1e-10 * (1 + abs(value)))
    return checks


def cmd_validate(cfg: RunConfig, out: Path, threads=1) -> int:
    if not cfg.oracle.get("enabled", False):
        raise UsageError("validate needs oracle.enabled = true")
    checks = run_validation(cfg)
    passed = all(c["passed"] for c in checks)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(out / "validation.json", {"schema": SCHEMA_VERSION, "N": cfg.N,
                                         "passed": passed, "checks": checks})
    failed = [c["name"] for c in checks if not c["passed"]]
    if failed:
        print("validation failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def reduction_tables(spec, N, min_steps=4000):
    """Tables at ``N`` and ``2N`` against an RK4 curve on a common refinement."""
    a, b, c, d, q, r, g, x = constant_coefficients(spec)
    per = max(1, math.ceil(min_steps / (2 * N)))
    curve = integrate_riccati_ode(a, b, c, d, q, r, g, T=spec.T, t0=spec.t0,
                                  steps=2 * N * per)
    tables = {}
    for size in (N, 2 * N):
        sol = solve_problem(spec, size)[3]
        tables[size] = compare_with_volterra(sol, curve, x)
    return tables


def cmd_reduce_sde(cfg: RunConfig, out: Path, threads=1) -> int:
    try:
        constant_coefficients(cfg.problem)
    except SpecError as exc:
        raise UsageError(str(exc)) from None
    tables = reduction_tables(cfg.problem, cfg.N)
    out.mkdir(parents=True, exist_ok=True)
    errors = {}
    for size, tab in tables.items():
        tab.write_csv(out / f"reduction_N{size}.csv")
        errors[size] = tab.max_error
    coarse, fine = errors[cfg.N], errors[2 * cfg.N]
    if coarse <= 1e-12 and fine <= 1e-12:
        ratio = "exact"
    else:
        ratio = coarse / fine if fine > 0 else math.inf
    _dump_json(out / "reduction.json", {"N": cfg.N, "max_error": {str(k): v for k, v in
                                                                   errors.items()},
                                        "ratio": ratio})
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "validate": cmd_validate,
            "reduce-sde": cmd_reduce_sde}


def build_parser():
    p = argparse.ArgumentParser(prog="volterra-lq",
                                description="LQ control of stochastic Volterra equations")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", default=None, help="output directory (overrides config)")
    p.add_argument("--threads", type=int, default=1, help="simulation worker threads")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg, cfg.out_dir(args.out), threads=args.threads)
    except (RegularityError, ConvergenceError, H4ViolationError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_REGULARITY
    except (UsageError, SpecError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

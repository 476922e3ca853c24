"""Command-line front end: ``simulate``, ``solve`` and ``bench``.

Exit codes: 0 success, 1 solver failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .model import Scenario, read_scenario
from .simulate import NonConvergence, read_trajectory_csv, simulate, zero_controls
from .solver import SolverOptions, solve
from .transcription import Grid, Scheme, build

logger = logging.getLogger("dengue_ocp")

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2

BENCH_COLUMNS = ["scheme", "h", "n_vars", "n_cons", "outer_iters", "inner_iters",
                 "objective", "feas", "kkt", "wall_time_s"]

# Published (n_vars, n_cons) for the benchmark grid, shown next to ours.
REFERENCE_SIZES = {
    (Scheme.EULER, 0.5): (727, 519),
    (Scheme.EULER, 0.25): (1455, 1039),
    (Scheme.EULER, 0.125): (2911, 2079),
    (Scheme.TRAPEZOIDAL, 0.5): (728, 520),
    (Scheme.TRAPEZOIDAL, 0.25): (1456, 1040),
    (Scheme.TRAPEZOIDAL, 0.125): (2912, 2080),
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    mode: str
    scheme: Scheme = Scheme.EULER
    h: float = 0.5
    scenario: Scenario = field(default_factory=Scenario)
    output_dir: Path = Path(".")
    solver: SolverOptions = field(default_factory=SolverOptions)
    u_max: float = math.inf
    controls_file: Path | None = None
    bench_schemes: tuple = (Scheme.EULER, Scheme.TRAPEZOIDAL)
    bench_steps: tuple = (0.5, 0.25, 0.125)
    parallel: int = 1

    def grid(self, h=None) -> Grid:
        try:
            return Grid(self.scenario.t_final, self.h if h is None else h)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def control_bounds(self):
        return (0.0, 0.0), (self.u_max, self.u_max)


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, allow_nan=True) + "\n")


def run_simulate(cfg: RunConfig) -> int:
    grid = cfg.grid()
    sc = cfg.scenario
    if cfg.controls_file is not None:
        _, _, controls = read_trajectory_csv(cfg.controls_file)
    else:
        controls = zero_controls(grid, cfg.scheme)
    try:
        traj = simulate(grid, controls, cfg.scheme, sc.x_init, sc.params)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    path = cfg.output_dir / "trajectory.csv"
    traj.to_csv(path)
    print(f"final x5 = {traj.final_cost:.10g}  ({path})")
    return EXIT_OK


def _solve_one(scheme: Scheme, h: float, cfg: RunConfig):
    sc = cfg.scenario
    problem = build(cfg.grid(h), scheme, sc.params, sc.x_init, cfg.control_bounds())
    report = solve(problem, opts=cfg.solver)
    return problem, report


def run_solve(cfg: RunConfig) -> int:
    try:
        problem, report = _solve_one(cfg.scheme, cfg.h, cfg)
    except NonConvergence as exc:
        logger.error("initial simulation failed: %s", exc)
        return EXIT_SOLVER
    summary = report.summary(problem)
    summary["multipliers"] = report.multipliers.tolist()
    _write_json(cfg.output_dir / "report.json", summary)
    report.trajectory.to_csv(cfg.output_dir / "solution.csv")
    print(f"{report.status.value}: objective = {report.objective:.6e}, "
          f"outer = {report.outer_iters}, inner = {report.inner_iters_total}, "
          f"feas = {report.feas_inf_norm:.2e}, kkt = {report.kkt_inf_norm:.2e}, "
          f"time = {report.wall_time:.3f}s")
    if not report.converged:
        logger.error("solver stopped with %s %s", report.status.value, report.note)
        return EXIT_SOLVER
    return EXIT_OK


def _bench_row(args):
    scheme, h, cfg = args
    try:
        problem, report = _solve_one(scheme, h, cfg)
    except Exception as exc:  # recorded per row; the grid keeps going
        return {"scheme": scheme.value, "h": h, "status": "Error", "error": str(exc)}
    return {
        "scheme": scheme.value,
        "h": h,
        "n_vars": problem.n_vars,
        "n_cons": problem.n_cons,
        "outer_iters": report.outer_iters,
        "inner_iters": report.inner_iters_total,
        "objective": report.objective,
        "feas": report.feas_inf_norm,
        "kkt": report.kkt_inf_norm,
        "wall_time_s": round(report.wall_time, 3),
        "status": report.status.value,
    }


def bench_rows(cfg: RunConfig) -> list[dict]:
    jobs = [(s, h, cfg) for s in cfg.bench_schemes for h in cfg.bench_steps]
    if cfg.parallel > 1:
        with ProcessPoolExecutor(max_workers=cfg.parallel) as pool:
            return list(pool.map(_bench_row, jobs))
    return [_bench_row(j) for j in jobs]


def format_bench_table(rows: list[dict]) -> str:
    """Per-scheme blocks with the published sizes alongside ours."""
    lines = []
    for scheme in dict.fromkeys(r["scheme"] for r in rows):
        lines.append(f"{scheme}")
        lines.append(f"{'h':>7} {'# var.':>7} {'(ref)':>6} {'# const.':>9} {'(ref)':>6} "
                     f"{'# outer':>8} {'# inner':>8} {'objective':>11} {'time (s)':>9}  status")
        for r in rows:
            if r["scheme"] != scheme:
                continue
            ref = REFERENCE_SIZES.get((Scheme.parse(scheme), r["h"]), ("-", "-"))
            if "n_vars" not in r:
                lines.append(f"{r['h']:>7g} {'':>7} {ref[0]:>6} {'':>9} {ref[1]:>6} "
                             f"{'':>8} {'':>8} {'':>11} {'':>9}  {r['status']}: {r['error']}")
                continue
            lines.append(f"{r['h']:>7g} {r['n_vars']:>7} {ref[0]:>6} {r['n_cons']:>9} {ref[1]:>6} "
                         f"{r['outer_iters']:>8} {r['inner_iters']:>8} {r['objective']:>11.4e} "
                         f"{r['wall_time_s']:>9.3f}  {r['status']}")
        lines.append("")
    return "\n".join(lines)


def run_bench(cfg: RunConfig) -> int:
    rows = bench_rows(cfg)
    with open(cfg.output_dir / "bench.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCH_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r.get(k, "")) for k in BENCH_COLUMNS])
    table = format_bench_table(rows)
    (cfg.output_dir / "bench.txt").write_text(table)
    print(table)
    return EXIT_OK if all(r["status"] == "Converged" for r in rows) else EXIT_SOLVER


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dengue-ocp", description="Optimal control of dengue epidemics by direct transcription.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="mode", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value parameter file")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--u-max", type=_positive_float, default=math.inf,
                        help="upper bound on both controls (default: unbounded)")

    one = argparse.ArgumentParser(add_help=False)
    one.add_argument("--scheme", choices=[s.value for s in Scheme], default="euler")
    one.add_argument("--h", type=_positive_float, default=0.5, help="step size in weeks")

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--tol-feas", type=_positive_float)
    solver.add_argument("--tol-opt", type=_positive_float)
    solver.add_argument("--max-outer", type=int)

    p_sim = sub.add_parser("simulate", parents=[common, one], help="integrate under a fixed schedule")
    p_sim.add_argument("--controls", type=Path,
                       help="CSV with u1,u2 columns (e.g. a solution.csv); default zero")
    sub.add_parser("solve", parents=[common, one, solver], help="solve one transcription")
    p_bench = sub.add_parser("bench", parents=[common, solver], help="run the scheme x step grid")
    p_bench.add_argument("--parallel", type=int, default=1, help="worker processes")
    p_bench.add_argument("--schemes", default="euler,trapezoidal")
    p_bench.add_argument("--steps", default="0.5,0.25,0.125")
    return parser


def config_from_args(args) -> RunConfig:
    try:
        scenario = read_scenario(args.config) if args.config else Scenario()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{args.config}: {exc}") from None
    cfg = RunConfig(mode=args.mode, scenario=scenario, output_dir=args.out, u_max=args.u_max)
    if args.mode in ("simulate", "solve"):
        cfg.scheme = Scheme.parse(args.scheme)
        cfg.h = args.h
        cfg.grid()
    if args.mode == "simulate":
        cfg.controls_file = args.controls
    if args.mode in ("solve", "bench"):
        overrides = {k: v for k, v in (("tol_feas", args.tol_feas), ("tol_opt", args.tol_opt),
                                       ("max_outer", args.max_outer)) if v is not None}
        try:
            cfg.solver = replace(cfg.solver, **overrides)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if args.mode == "bench":
        try:
            cfg.bench_schemes = tuple(Scheme.parse(s.strip()) for s in args.schemes.split(","))
            cfg.bench_steps = tuple(float(s) for s in args.steps.split(","))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for h in cfg.bench_steps:
            cfg.grid(h)
        if args.parallel < 1:
            raise ConfigError("--parallel must be >= 1")
        cfg.parallel = args.parallel
    try:
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory: {exc}") from None
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(over="ignore", invalid="ignore")
    try:
        cfg = config_from_args(args)
        runner = {"simulate": run_simulate, "solve": run_solve, "bench": run_bench}[cfg.mode]
        return runner(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergence as exc:
        print(f"integration failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

    robust-trajopt optimize <config>
    robust-trajopt simulate <config> <dir> [--feedback=on|off] [--runs=N] [--wrap-angles]
    robust-trajopt compare <config> <dir>
    robust-trajopt check-gradients <config> [--samples=N]

Exit codes: 0 success (converged), 1 configuration or input error,
2 iteration cap or feasible but not stationary, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import solver as solver_mod
from .artifacts import read_solution, write_csv, write_json, write_solution
from .baselines import tvlqr
from .config import OUTPUT_DIR_ENV, load_config
from .errors import ConfigError, NumericFailure
from .plotting import plot_error_band, plot_gain_comparison, plot_state_space
from .simulate import compare_dmax_profile, monte_carlo
from .transcription import (build_nlp, check_gradient, knot_jacobians, objective_gradient,
                            random_decision_vector, unpack, zero_guess)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NOT_CONVERGED = 2
EXIT_NUMERIC = 3
GRADIENT_THRESHOLD = 1e-4

STATUS_EXIT = {
    solver_mod.CONVERGED: EXIT_OK,
    solver_mod.FEASIBLE_NOT_STATIONARY: EXIT_NOT_CONVERGED,
    solver_mod.ITERATION_CAP: EXIT_NOT_CONVERGED,
    solver_mod.NUMERIC_FAILURE: EXIT_NUMERIC,
}

log = logging.getLogger("robust_trajopt")


def _output_dir(default) -> Path:
    return Path(os.environ.get(OUTPUT_DIR_ENV) or default)


def cmd_optimize(config_path) -> int:
    rc = load_config(config_path)
    spec = rc.problem_spec()
    out = rc.resolved_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    result = solver_mod.solve(build_nlp(spec), rc.solver_config(), zero_guess(spec))
    wall = time.perf_counter() - start
    X, U, W = unpack(spec, result.x)
    write_solution(out, X, U, W)
    write_csv(out / "history.csv",
              ["iter", "objective", "feasibility", "penalty_weight", "grad_norm"],
              ([h.iter, h.objective, h.feasibility, h.penalty_weight, h.grad_norm]
               for h in result.history))
    write_json(out / "summary.json", {
        "status": result.status, "objective": result.objective,
        "feasibility": result.max_defect, "grad_norm": result.grad_norm,
        "iterations": result.iterations, "outer_iterations": len(result.history),
        "wall_time_s": round(wall, 3), "message": result.message,
        "initial_clamped": result.clamped_initial,
    })
    (out / "config.json").write_text(rc.dumps())
    print(f"{result.status}: objective={result.objective:.6g} max|defect|={result.max_defect:.3e} "
          f"W={np.array2string(W, precision=6)} -> {out}")
    return STATUS_EXIT[result.status]


def _mode_tag(feedback: bool) -> str:
    return "closed" if feedback else "open"


def cmd_simulate(config_path, solution_dir, feedback=True, runs=None, wrap=False) -> int:
    rc = load_config(config_path)
    spec = rc.problem_spec()
    m = spec.model
    X, U, W = read_solution(solution_dir, m.n_x, m.n_u, need_gain=feedback)
    if len(U) != spec.T:
        raise ConfigError(f"solution has {len(U)} steps but the config horizon is {spec.T}")
    sim = rc.simulation
    runs = sim["runs"] if runs is None else runs
    if runs < 1:
        raise ConfigError("--runs must be at least 1")
    stats = monte_carlo(m, X, U, W if feedback else None, rc.noise_spec(), runs,
                        dt=spec.dt, mismatch=sim["mismatch"], error_index=sim["error_index"])
    out = _output_dir(solution_dir)
    tag = _mode_tag(feedback)
    n, nu = m.n_x, m.n_u

    def rows():
        for i, r in enumerate(stats.results):
            err = stats.errors[i]
            for k in range(len(r.states)):
                u = list(r.controls[k]) if k < r.steps else [None] * nu
                sat = int(r.saturated[k]) if k < r.steps else None
                yield [i, k, *r.states[k], *u, sat, err[k]]

    write_csv(out / f"rollouts_{tag}.csv",
              ["run", "k", *(f"x{j}" for j in range(n)), *(f"u{j}" for j in range(nu)),
               "saturated", "error"], rows())
    div_at = [r.diverged_at if r.diverged else None for r in stats.results]
    write_csv(out / f"stats_{tag}.csv", ["k", "mean", "std", "diverged"],
              ([k, stats.mean[k], stats.std[k], sum(d is not None and d <= k for d in div_at)]
               for k in range(len(stats.mean))))
    title = "closed loop" if feedback else "open loop"
    plot_state_space(out / f"trajectories_{tag}.svg", X, stats.results, title, wrap=wrap)
    ylabel = "|dx|" if sim["error_index"] is None else f"|dx{sim['error_index']}|"
    plot_error_band(out / f"errors_{tag}.svg", stats, spec.dt, title, ylabel)
    print(f"{title}: {runs} runs, {stats.diverged} diverged, "
          f"terminal error mean={stats.terminal_mean:.4g} std={stats.terminal_std:.4g} -> {out}")
    return EXIT_OK


def cmd_compare(config_path, solution_dir) -> int:
    rc = load_config(config_path)
    spec = rc.problem_spec()
    m = spec.model
    X, U, W = read_solution(solution_dir, m.n_x, m.n_u, need_gain=True)
    A, B = knot_jacobians(spec, X, U)
    gains = tvlqr(A, B, spec.Q, spec.R, spec.Q_terminal)
    lqr_gain = -gains.K     # same sign convention as W: u = u_k + G dx
    out = _output_dir(solution_dir)
    n, nu = m.n_x, m.n_u
    cols = [f"{i}_{j}" for i in range(nu) for j in range(n)]
    write_csv(out / "gains_comparison.csv",
              ["k", *(f"u{j}" for j in range(nu)), *(f"static_{c}" for c in cols),
               *(f"lqr_{c}" for c in cols)],
              ([k, *U[k], *W.ravel(), *lqr_gain[k].ravel()] for k in range(spec.T)))
    prof = compare_dmax_profile(spec, X, U, W)
    write_csv(out / "dmax_profile.csv", ["k", "d_max", "d_max_open", "eigengap"],
              zip(prof.k, prof.d_max, prof.d_max_open, prof.eigengap))
    plot_gain_comparison(out / "gains.svg", U, W, lqr_gain, spec.dt)
    print(f"sum d_max: static gain {prof.d_max.sum():.6g}, no feedback {prof.d_max_open.sum():.6g} -> {out}")
    return EXIT_OK


def cmd_check_gradients(config_path, samples=3, corrupt=False) -> int:
    rc = load_config(config_path)
    spec = rc.problem_spec()
    rng = np.random.default_rng(rc.simulation["seed"])
    worst = 0.0
    for i in range(samples):
        v = random_decision_vector(spec, rng)
        grad = None
        if corrupt:
            grad = objective_gradient(spec, v)
            grad[np.argmax(np.abs(grad))] *= 1.01
        chk = check_gradient(spec, v, gradient=grad)
        worst = max(worst, chk.relative_error)
        note = f" ({chk.degenerate_knots.size} degenerate knots excluded)" if chk.degenerate_knots.size else ""
        print(f"sample {i}: relative error {chk.relative_error:.3e}{note}")
    ok = worst <= GRADIENT_THRESHOLD
    print(f"max relative error {worst:.3e} {'<=' if ok else '>'} {GRADIENT_THRESHOLD:g}: "
          f"{'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return value == "on"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robust-trajopt",
                                description="Robust trajectory optimisation with a static feedback gain.")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver iterations")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("optimize", help="solve the trajectory and gain")
    s.add_argument("config")

    s = sub.add_parser("simulate", help="Monte-Carlo rollouts around a solution")
    s.add_argument("config")
    s.add_argument("dir")
    s.add_argument("--feedback", type=_on_off, default=True, metavar="on|off")
    s.add_argument("--runs", type=int, default=None)
    s.add_argument("--wrap-angles", action="store_true", help="wrap x0 to [-pi, pi) in plots")

    s = sub.add_parser("compare", help="static gain vs time-varying LQR, d_max profile")
    s.add_argument("config")
    s.add_argument("dir")

    s = sub.add_parser("check-gradients", help="analytic vs finite-difference objective gradient")
    s.add_argument("config")
    s.add_argument("--samples", type=int, default=3)
    s.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "optimize":
            return cmd_optimize(args.config)
        if args.command == "simulate":
            return cmd_simulate(args.config, args.dir, args.feedback, args.runs, args.wrap_angles)
        if args.command == "compare":
            return cmd_compare(args.config, args.dir)
        return cmd_check_gradients(args.config, args.samples, args.corrupt_gradient)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

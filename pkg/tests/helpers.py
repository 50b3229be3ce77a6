"""Shared generators and oracles for the test suite."""

import os
import time
from pathlib import Path

import numpy as np

from robust_trajopt.robust_metric import d_max_term


def random_instance(rng, n_x, n_u, min_gap=1e-6):
    """Random (A, B, W, S, P=I) whose top eigenvalue is separated by ``min_gap``."""
    while True:
        A = rng.standard_normal((n_x, n_x))
        B = rng.standard_normal((n_x, n_u))
        W = rng.standard_normal((n_u, n_x))
        S = rng.uniform(0.2, 5.0, n_x)
        P = np.eye(n_x)
        term = d_max_term(A, B, W, S, P)
        if term.eigengap > min_gap:
            return A, B, W, S, P, term


def fd_matrix(fun, Z, h=1e-6):
    """Central differences of scalar ``fun`` with respect to every entry of ``Z``."""
    Z = np.asarray(Z, dtype=float)
    g = np.empty_like(Z)
    for idx in np.ndindex(Z.shape):
        zp, zm = Z.copy(), Z.copy()
        zp[idx] += h
        zm[idx] -= h
        g[idx] = (fun(zp) - fun(zm)) / (2 * h)
    return g


def danskin_fd(A, B, W, S, P, h=1e-6):
    """Finite-difference gradients of d_max with respect to A, B and W."""
    d = lambda a, b, w: d_max_term(a, b, w, S, P).d_max
    return (fd_matrix(lambda a: d(a, B, W), A, h),
            fd_matrix(lambda b: d(A, b, W), B, h),
            fd_matrix(lambda w: d(A, B, w), W, h))


def relative_error(g, ref):
    return float(np.linalg.norm(g - ref) / max(np.linalg.norm(ref), 1e-12))


def boundary_max(M, S, P, count, seed):
    """Largest sampled ``|M d|_P^2`` over ``count`` points with ``d' S d = 1``."""
    from robust_trajopt.robust_metric import sample_ellipsoid_boundary
    D = sample_ellipsoid_boundary(S, count, seed)
    MD = D @ np.asarray(M).T
    return float(np.max(np.einsum("ij,jk,ik->i", MD, P, MD)))


def shipped_spec(name, **problem_overrides):
    """Problem spec from a shipped config with some problem fields replaced."""
    import json

    from robust_trajopt.config import RunConfig, shipped_config_path
    raw = json.loads(shipped_config_path(name).read_text())
    raw["problem"].update(problem_overrides)
    return RunConfig.from_dict(raw).problem_spec()


def run_cli(*args, env=None):
    """Run the CLI in-process; ``env`` entries are set for the call only."""
    from robust_trajopt.cli import main
    saved = {}
    for k, v in (env or {}).items():
        saved[k] = os.environ.get(k)
        os.environ[k] = v
    try:
        return main([str(a) for a in args])
    finally:
        for k, v in saved.items():
            if v is None:
                os.environ.pop(k, None)
            else:
                os.environ[k] = v


ACCEPTANCE_LINES = []


def report(number, ok, detail):
    """Record and print one acceptance line; the summary hook repeats them at the end."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return ok


class PipelineRun:
    """Outputs of optimize + simulate (on/off) + compare for one shipped config."""

    def __init__(self, name, out_dir):
        from robust_trajopt.config import load_config, shipped_config_path
        self.name = name
        self.config = shipped_config_path(name)
        self.dir = Path(out_dir)
        env = {"ROBUST_TRAJOPT_OUTPUT_DIR": str(self.dir)}
        t0 = time.perf_counter()
        self.optimize_exit = run_cli("optimize", self.config, env=env)
        self.optimize_seconds = time.perf_counter() - t0
        t0 = time.perf_counter()
        self.simulate_exit = (run_cli("simulate", self.config, self.dir, "--feedback=on"),
                              run_cli("simulate", self.config, self.dir, "--feedback=off"))
        self.simulate_seconds = time.perf_counter() - t0
        self.compare_exit = run_cli("compare", self.config, self.dir)
        self.spec = load_config(self.config).problem_spec()

    def csv_bytes(self):
        return {p.name: p.read_bytes() for p in sorted(self.dir.glob("*.csv"))}

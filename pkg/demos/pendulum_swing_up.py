"""Pendulum swing-up with a simultaneously optimised static gain.

Solves the shipped pendulum problem from a zero guess, then compares noisy
rollouts with and without the gain.

Run: python3 demos/pendulum_swing_up.py
"""

import time

import numpy as np

from robust_trajopt import build_nlp, compare_dmax_profile, monte_carlo, solve, unpack
from robust_trajopt.config import load_config, shipped_config_path
from robust_trajopt.transcription import zero_guess

rc = load_config(shipped_config_path("pendulum"))
spec = rc.problem_spec()

start = time.perf_counter()
res = solve(build_nlp(spec), rc.solver_config(), zero_guess(spec))
X, U, W = unpack(spec, res.x)
print(f"{res.status} in {time.perf_counter() - start:.1f} s, {res.iterations} inner steps, "
      f"max|defect| {res.max_defect:.1e}")
print(f"final state {X[-1]} (goal {spec.x_goal}), peak |u| {np.abs(U).max():.3f}")
print(f"gain W = {W.ravel()}")

prof = compare_dmax_profile(spec, X, U, W)
print(f"sum d_max: with gain {prof.d_max.sum():.2f}, without {prof.d_max_open.sum():.2f}")

noise = rc.noise_spec()
for label, gain in (("closed", W), ("open", None)):
    stats = monte_carlo(spec.model, X, U, gain, noise, rc.simulation["runs"], dt=spec.dt)
    print(f"{label:>6} loop: terminal |dx| mean {stats.terminal_mean:.3f} "
          f"std {stats.terminal_std:.3f}, {stats.diverged} diverged")

"""Ball and beam under friction mismatch.

The controller is solved on nominal friction and replayed on plants with
friction raised and lowered by half.

Run: python3 demos/ballbeam_mismatch.py
"""

import numpy as np

from robust_trajopt import build_nlp, compare_dmax_profile, monte_carlo, solve, unpack
from robust_trajopt.config import load_config, shipped_config_path
from robust_trajopt.transcription import zero_guess

rc = load_config(shipped_config_path("ballbeam"))
spec = rc.problem_spec()
res = solve(build_nlp(spec), rc.solver_config(), zero_guess(spec))
X, U, W = unpack(spec, res.x)
print(f"{res.status}, max|defect| {res.max_defect:.1e}")
print(f"ball {X[0, 0]:+.3f} m -> {X[-1, 0]:+.4f} m over {spec.T * spec.dt:.1f} s")
print(f"gain W = {np.array2string(W.ravel(), precision=4)}")

# the control only reaches the servo row of the closed-loop map, so the
# one-step worst case is shaped through the servo states
prof = compare_dmax_profile(spec, X, U, W)
print(f"sum d_max: with gain {prof.d_max.sum():.3f}, without {prof.d_max_open.sum():.3f}")

sim = rc.simulation
for label, gain in (("closed", W), ("open", None)):
    stats = monte_carlo(spec.model, X, U, gain, rc.noise_spec(), sim["runs"], dt=spec.dt,
                        mismatch=sim["mismatch"], error_index=sim["error_index"])
    print(f"{label:>6} loop: final ball error mean {stats.terminal_mean:.4f} "
          f"std {stats.terminal_std:.4f}")

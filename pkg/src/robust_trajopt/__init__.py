"""Trajectory optimisation with a simultaneously optimised static feedback gain.

The robustness term is the worst-case one-step deviation over an ellipsoid,
computed as a top eigenvalue, with an envelope-theorem gradient.
"""

from .baselines import TvlqrGains, tvlqr
from .dynamics import (DynamicsModel, JacobianPair, discrete_jacobians, finite_diff_jacobians,
                       make_ballbeam, make_double_integrator, make_model, make_pendulum,
                       step_euler)
from .errors import ConfigError, DegenerateEigenvalueError, NumericFailure
from .robust_metric import (RobustTerm, closed_loop_map, d_max_term, grad_dmax, max_eig_sym,
                            sample_ellipsoid_boundary, scaled_gram)
from .simulate import NoiseSpec, RolloutResult, compare_dmax_profile, monte_carlo, rollout
from .solver import SolveResult, SolverConfig, project_to_box, solve
from .transcription import (DecisionVector, NlpFunctions, ProblemSpec, build_nlp, defects,
                            objective_gradient, pack, quadratic_cost, total_objective, unpack)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DecisionVector", "DegenerateEigenvalueError", "DynamicsModel",
    "JacobianPair", "NlpFunctions", "NoiseSpec", "NumericFailure", "ProblemSpec",
    "RobustTerm", "RolloutResult", "SolveResult", "SolverConfig", "TvlqrGains",
    "build_nlp", "closed_loop_map", "compare_dmax_profile", "d_max_term", "defects",
    "discrete_jacobians", "finite_diff_jacobians", "grad_dmax", "make_ballbeam",
    "make_double_integrator", "make_model", "make_pendulum", "max_eig_sym", "monte_carlo",
    "objective_gradient", "pack", "project_to_box", "quadratic_cost", "rollout",
    "sample_ellipsoid_boundary", "scaled_gram", "solve", "step_euler", "total_objective",
    "tvlqr", "unpack",
]

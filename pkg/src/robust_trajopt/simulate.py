"""Noisy closed-loop and open-loop rollouts around a nominal trajectory."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .dynamics import DynamicsModel
from .errors import ConfigError
from .robust_metric import d_max_batch
from .transcription import ProblemSpec, knot_jacobians

DIVERGENCE_THRESHOLD = 1e3


@dataclass(frozen=True)
class NoiseSpec:
    """Additive per-state noise ``U(-a_i, a_i)`` and an initial deviation ball."""

    bounds: np.ndarray
    seed: int = 0
    initial_radius: float = 0.0

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.bounds, dtype=float))
        problems = []
        if b.ndim != 1:
            problems.append("noise bounds must be a vector")
        if not np.all(np.isfinite(b)) or np.any(b < 0):
            problems.append("noise bounds must be finite and nonnegative")
        if not (np.isfinite(self.initial_radius) and self.initial_radius >= 0):
            problems.append("initial_radius must be nonnegative")
        if problems:
            raise ConfigError(problems)
        b.setflags(write=False)
        object.__setattr__(self, "bounds", b)

    @classmethod
    def zero(cls, n_x: int, seed: int = 0) -> "NoiseSpec":
        return cls(np.zeros(n_x), seed)


@dataclass
class RolloutResult:
    states: np.ndarray       # (K+1, n_x); K < T when the run diverged
    controls: np.ndarray     # (K, n_u), after clamping
    deviations: np.ndarray   # (K+1, n_x), states - nominal
    saturated: np.ndarray    # (K,) bool
    noise: np.ndarray        # (K, n_x) draws that were added
    diverged: bool = False
    diverged_at: Optional[int] = None

    @property
    def steps(self) -> int:
        return len(self.controls)


def _initial_deviation(rng, n_x, radius):
    if radius == 0.0:
        return np.zeros(n_x)
    d = rng.standard_normal(n_x)
    d /= np.linalg.norm(d)
    return d * radius * rng.uniform() ** (1.0 / n_x)


def rollout(model: DynamicsModel, nominal_X, nominal_U, W=None, noise: NoiseSpec | None = None,
            mismatch: Mapping[str, float] | None = None, *, dt: float,
            dx0=None, rng: np.random.Generator | None = None) -> RolloutResult:
    """Simulate ``x+ = x + dt f(x, u_hat) + w`` against a nominal trajectory.

    ``u_hat = clamp(u_k + W dx_k)`` with feedback, ``clamp(u_k)`` without.
    ``mismatch`` overrides physical parameters of the simulated plant only.
    The run stops early when the state is non-finite or its norm exceeds
    ``DIVERGENCE_THRESHOLD``.
    """
    X = np.asarray(nominal_X, dtype=float)
    U = np.asarray(nominal_U, dtype=float)
    T = len(U)
    if X.shape != (T + 1, model.n_x) or U.shape != (T, model.n_u):
        raise ValueError(f"nominal shapes {X.shape}, {U.shape} do not match the model and horizon")
    if not dt > 0:
        raise ValueError("dt must be positive")
    noise = noise or NoiseSpec.zero(model.n_x)
    if noise.bounds.shape != (model.n_x,):
        raise ConfigError(f"noise bounds need {model.n_x} entries, got {noise.bounds.size}")
    if W is not None:
        W = np.asarray(W, dtype=float).reshape(model.n_u, model.n_x)
    plant = model.with_params(**mismatch) if mismatch else model
    rng = rng if rng is not None else np.random.default_rng(noise.seed)

    states = np.empty((T + 1, model.n_x))
    controls = np.empty((T, model.n_u))
    draws = np.empty((T, model.n_x))
    saturated = np.zeros(T, dtype=bool)
    dx = _initial_deviation(rng, model.n_x, noise.initial_radius) if dx0 is None else np.asarray(dx0, float)
    states[0] = X[0] + dx
    for k in range(T):
        u = U[k] if W is None else U[k] + W @ (states[k] - X[k])
        u_hat = plant.clamp_control(u)
        saturated[k] = bool(np.any(u_hat != u))
        controls[k] = u_hat
        w = rng.uniform(-noise.bounds, noise.bounds)
        draws[k] = w
        with np.errstate(all="ignore"):
            x_next = states[k] + dt * plant.vector_field(states[k], u_hat) + w
        if not np.all(np.isfinite(x_next)) or np.linalg.norm(x_next) > DIVERGENCE_THRESHOLD:
            n = k + 1 if np.all(np.isfinite(x_next)) else k
            if n == k + 1:
                states[k + 1] = x_next
            return RolloutResult(states[:n + 1], controls[:n], states[:n + 1] - X[:n + 1],
                                 saturated[:n], draws[:n], True, k + 1)
        states[k + 1] = x_next
    return RolloutResult(states, controls, states - X, saturated, draws)


@dataclass
class ErrorStats:
    mean: np.ndarray          # (T+1,) over non-diverged runs
    std: np.ndarray
    runs: int
    diverged: int
    errors: np.ndarray = field(repr=False)   # (runs, T+1), NaN after divergence
    results: list = field(default_factory=list, repr=False)

    @property
    def terminal_mean(self) -> float:
        return float(self.mean[-1])

    @property
    def terminal_std(self) -> float:
        return float(self.std[-1])


def deviation_norm(result: RolloutResult, index: Optional[int] = None) -> np.ndarray:
    """``|dx_k|`` per step, or ``|dx_k[index]|`` for a single state component."""
    if index is None:
        return np.linalg.norm(result.deviations, axis=1)
    return np.abs(result.deviations[:, index])


def monte_carlo(model: DynamicsModel, nominal_X, nominal_U, W, noise: NoiseSpec, runs: int,
                base_seed: int | None = None, *, dt: float,
                mismatch: Mapping[str, float] | Sequence[Mapping[str, float]] | None = None,
                error_index: Optional[int] = None) -> ErrorStats:
    """Independent seeded rollouts and per-step error statistics.

    Run ``i`` uses the ``i``-th child of ``SeedSequence(base_seed)``. A list
    of mismatch overrides is cycled over the runs. Diverged runs are counted
    and left out of the mean and standard deviation.
    """
    if int(runs) < 1:
        raise ValueError("runs must be at least 1")
    base_seed = noise.seed if base_seed is None else base_seed
    children = np.random.SeedSequence(base_seed).spawn(runs)
    if mismatch is None or isinstance(mismatch, Mapping):
        plants = [mismatch] * runs
    else:
        mismatch = list(mismatch)
        plants = [mismatch[i % len(mismatch)] for i in range(runs)]
    T = len(nominal_U)
    errors = np.full((runs, T + 1), np.nan)
    results = []
    for i in range(runs):
        r = rollout(model, nominal_X, nominal_U, W, noise, plants[i], dt=dt,
                    rng=np.random.default_rng(children[i]))
        errors[i, :len(r.deviations)] = deviation_norm(r, error_index)
        results.append(r)
    ok = np.array([not r.diverged for r in results])
    kept = errors[ok]
    if kept.shape[0]:
        mean = kept.mean(axis=0)
        std = kept.std(axis=0)
    else:
        mean = std = np.full(T + 1, np.nan)
    return ErrorStats(mean, std, runs, int((~ok).sum()), errors, results)


class DmaxProfile(NamedTuple):
    k: np.ndarray
    d_max: np.ndarray          # with the solved gain
    d_max_open: np.ndarray     # with W = 0
    eigengap: np.ndarray


def compare_dmax_profile(spec: ProblemSpec, X, U, W) -> DmaxProfile:
    """Per-knot worst-case deviation with the given gain and with no feedback."""
    A, B = knot_jacobians(spec, np.asarray(X, float), np.asarray(U, float))
    W = np.asarray(W, dtype=float)
    closed = d_max_batch(A, B, W, spec.S, spec.P)
    open_ = d_max_batch(A, B, np.zeros_like(W), spec.S, spec.P)
    return DmaxProfile(np.arange(spec.T), closed.d_max, open_.d_max, closed.eigengap)

"""Augmented-Lagrangian solver for box-bounded, equality-constrained NLPs.

Outer loop: first-order multiplier updates on the equality constraints with
a penalty weight that grows whenever feasibility does not improve enough.
Inner loop: a projected quasi-Newton method with an Armijo backtracking
search along the projection arc. When the NLP supplies a Hessian model the
quasi-Newton matrix is that model plus ``rho J'J`` (regularised until
positive definite); otherwise limited-memory BFGS is used. Both fall back to
projected gradient steps when the model direction fails. Everything is
deterministic.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .errors import NumericFailure

log = logging.getLogger(__name__)

CONVERGED = "converged"
FEASIBLE_NOT_STATIONARY = "feasible-but-not-stationary"
ITERATION_CAP = "iteration-cap"
NUMERIC_FAILURE = "numeric-failure"

STAGNATION_WINDOW = 20
STAGNATION_RTOL = 1e-10


@dataclass
class SolverConfig:
    max_outer_iterations: int = 40
    max_inner_iterations: int = 200
    defect_tolerance: float = 1e-6
    gradient_tolerance: float = 1e-6
    initial_penalty: float = 10.0
    penalty_growth: float = 10.0
    max_penalty: float = 1e12
    sufficient_decrease: float = 1e-4
    backtracking_factor: float = 0.5
    max_backtracks: int = 30
    memory: int = 12
    inner_method: str = "auto"   # "auto" | "newton" | "lbfgs"

    def __post_init__(self):
        problems = []
        for name in ("defect_tolerance", "gradient_tolerance", "initial_penalty",
                     "sufficient_decrease", "backtracking_factor"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive")
        if not self.penalty_growth > 1:
            problems.append("penalty_growth must exceed 1")
        if not 0 < self.backtracking_factor < 1:
            problems.append("backtracking_factor must lie in (0, 1)")
        if not 0 < self.sufficient_decrease < 1:
            problems.append("sufficient_decrease must lie in (0, 1)")
        for name in ("max_outer_iterations", "max_inner_iterations", "memory", "max_backtracks"):
            if int(getattr(self, name)) < 1:
                problems.append(f"{name} must be at least 1")
        if self.inner_method not in ("auto", "newton", "lbfgs"):
            problems.append("inner_method must be auto, newton or lbfgs")
        if problems:
            from .errors import ConfigError
            raise ConfigError(problems)


@dataclass
class HistoryEntry:
    iter: int
    objective: float
    feasibility: float
    penalty_weight: float
    grad_norm: float
    inner_iterations: int


@dataclass
class SolveResult:
    status: str
    iterations: int
    objective: float
    max_defect: float
    grad_norm: float
    x: np.ndarray
    multipliers: np.ndarray
    history: List[HistoryEntry] = field(default_factory=list)
    # (merit before, merit after, Armijo right-hand side) per accepted step
    line_search: List[tuple] = field(default_factory=list, repr=False)
    clamped_initial: bool = False
    message: str = ""

    @property
    def converged(self):
        return self.status == CONVERGED


def project_to_box(v, lower, upper) -> np.ndarray:
    return np.minimum(np.maximum(v, lower), upper)


def projected_gradient_norm(x, g, lower, upper) -> float:
    return float(np.max(np.abs(project_to_box(x - g, lower, upper) - x), initial=0.0))


def _two_loop(g, pairs, mask):
    """L-BFGS product ``H g`` restricted to the free variables in ``mask``."""
    q = np.where(mask, g, 0.0)
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * np.dot(s[mask], q[mask])
        q = q - a * np.where(mask, y, 0.0)
        alphas.append(a)
    if pairs:
        s, y, _ = pairs[-1]
        yy = np.dot(y[mask], y[mask])
        gamma = np.dot(s[mask], y[mask]) / yy if yy > 0 else 1.0
        if not gamma > 0:
            gamma = 1.0
        q *= gamma
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * np.dot(y[mask], q[mask])
        q = q + (a - b) * np.where(mask, s, 0.0)
    return np.where(mask, q, 0.0)


def minimize_box(fun, x0, lower, upper, tol, max_iter, config: SolverConfig,
                 line_search_log=None):
    """Projected L-BFGS on ``fun(x) -> (f, g)`` over ``lower <= x <= upper``.

    Returns ``(x, f, g, pg_norm, iterations, stalled)``.
    """
    x = project_to_box(np.asarray(x0, dtype=float), lower, upper)
    f, g = fun(x)
    pairs = deque(maxlen=config.memory)
    it = 0
    stalled = False
    eps_b = 1e-12
    while True:
        pg = projected_gradient_norm(x, g, lower, upper)
        if pg <= tol or it >= max_iter:
            break
        at_lo = (x <= lower + eps_b) & (g > 0)
        at_hi = (x >= upper - eps_b) & (g < 0)
        free = ~(at_lo | at_hi)
        d = -_two_loop(g, list(pairs), free)
        if not pairs:
            d = d / max(1.0, float(np.max(np.abs(d), initial=0.0)))
        if not np.dot(g, d) < 0:
            pairs.clear()
            d = np.where(free, -g, 0.0)
            d = d / max(1.0, float(np.max(np.abs(d), initial=0.0)))
        accepted = _line_search(fun, x, f, g, d, lower, upper, config)
        if accepted is None and pairs:
            # curvature model unusable: restart from a scaled gradient step
            pairs.clear()
            d = np.where(free, -g, 0.0)
            d = d / max(1.0, float(np.max(np.abs(d), initial=0.0)))
            accepted = _line_search(fun, x, f, g, d, lower, upper, config)
        if accepted is None:
            stalled = True
            break
        x_new, f_new, g_new, rhs = accepted
        if line_search_log is not None:
            line_search_log.append((f, f_new, rhs))
        s = x_new - x
        y = g_new - g
        sy = float(np.dot(s, y))
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            pairs.append((s, y, 1.0 / sy))
        x, f, g = x_new, f_new, g_new
        it += 1
    return x, f, g, projected_gradient_norm(x, g, lower, upper), it, stalled


def _regularised_solve(H, g):
    """Newton step on a positive-definite modification of ``H``.

    Eigenvalues are replaced by their magnitude, floored at a small fraction
    of the largest one, so directions of negative curvature are still scaled
    by their own curvature rather than by a global shift.
    """
    H = 0.5 * (H + H.T)
    try:
        w, V = np.linalg.eigh(H)
    except np.linalg.LinAlgError:
        return None
    floor = 1e-10 * max(1.0, float(np.max(np.abs(w), initial=0.0)))
    w = np.maximum(np.abs(w), floor)
    return -(V @ ((V.T @ g) / w))


def minimize_box_newton(fun, hess, x0, lower, upper, tol, max_iter, config: SolverConfig,
                        line_search_log=None, blocks=None):
    """Projected Newton-type iteration with ``hess(x) -> H`` as curvature model.

    Variables within ``eps`` of a bound whose gradient pushes outward are
    held fixed; the model step is taken in the remaining variables. When the
    full step has to be shortened, the step restricted to each index block in
    ``blocks`` is tried as well and the lowest merit wins; this keeps a kink
    in one block from throttling progress in the others.
    Returns the same tuple as :func:`minimize_box`.
    """
    x = project_to_box(np.asarray(x0, dtype=float), lower, upper)
    f, g = fun(x)
    fixed_always = lower == upper
    it = 0
    stalled = False
    recent = deque([f], maxlen=STAGNATION_WINDOW + 1)
    while True:
        pg = projected_gradient_norm(x, g, lower, upper)
        if pg <= tol or it >= max_iter:
            break
        if (len(recent) > STAGNATION_WINDOW
                and recent[0] - f <= STAGNATION_RTOL * max(1.0, abs(f))):
            # creeping along a kink of the max-eigenvalue term
            stalled = True
            break
        eps = min(1e-6, pg)
        active = fixed_always | ((x <= lower + eps) & (g > 0)) | ((x >= upper - eps) & (g < 0))
        free = np.flatnonzero(~active)
        d = np.zeros_like(x)
        H = hess(x)
        step = _regularised_solve(H[np.ix_(free, free)], g[free])
        if step is not None:
            d[free] = step
        accepted = None
        if step is not None and np.dot(g, d) < 0:
            accepted = _line_search(fun, x, f, g, d, lower, upper, config)
            full = project_to_box(x + d, lower, upper)
            if blocks and (accepted is None or np.any(accepted[0] != full)):
                for idx in blocks:
                    db = np.zeros_like(d)
                    db[idx] = d[idx]
                    if not np.dot(g, db) < 0:
                        continue
                    trial = _line_search(fun, x, f, g, db, lower, upper, config)
                    if trial is not None and (accepted is None or trial[1] < accepted[1]):
                        accepted = trial
        if accepted is None:
            d = np.where(active, 0.0, -g)
            d = d / max(1.0, float(np.max(np.abs(d), initial=0.0)))
            accepted = _line_search(fun, x, f, g, d, lower, upper, config)
        if accepted is None:
            stalled = True
            break
        x_new, f_new, g_new, rhs = accepted
        if line_search_log is not None:
            line_search_log.append((f, f_new, rhs))
        x, f, g = x_new, f_new, g_new
        recent.append(f)
        it += 1
    return x, f, g, projected_gradient_norm(x, g, lower, upper), it, stalled


def _line_search(fun, x, f, g, d, lower, upper, config):
    t = 1.0
    for _ in range(config.max_backtracks):
        x_t = project_to_box(x + t * d, lower, upper)
        step = x_t - x
        if np.max(np.abs(step), initial=0.0) <= 1e-15 * (1.0 + np.max(np.abs(x), initial=0.0)):
            return None
        slope = float(np.dot(g, step))
        if slope >= 0:
            t *= config.backtracking_factor
            continue
        f_t, g_t = fun(x_t)
        rhs = f + config.sufficient_decrease * slope
        if np.isfinite(f_t) and f_t <= rhs:
            return x_t, f_t, g_t, rhs
        t *= config.backtracking_factor
    return None


def solve(nlp, config: SolverConfig | None = None, initial=None) -> SolveResult:
    """Minimise ``nlp.objective`` subject to its defects and box bounds.

    ``nlp`` needs ``objective``, ``objective_gradient``,
    ``equality_constraints``, ``constraint_vjp`` (``J' y``), ``lower`` and
    ``upper``. An optional ``hessian(v, y)`` (model of the Lagrangian
    Hessian) together with ``constraint_jacobian`` enables the Newton-type
    inner method. Failures are reported through the result status, never
    raised.
    """
    config = config or SolverConfig()
    lower, upper = np.asarray(nlp.lower, float), np.asarray(nlp.upper, float)
    x = np.zeros(nlp.n_vars) if initial is None else np.array(initial, dtype=float)
    clamped = bool(np.any((x < lower) | (x > upper)))
    if clamped:
        log.warning("initial point outside bounds; clamping")
    x = project_to_box(x, lower, upper)
    lam = np.zeros(nlp.n_constraints)
    rho = config.initial_penalty
    history: List[HistoryEntry] = []
    ls_log: list = []
    total_inner = 0

    def augmented(z):
        c = nlp.equality_constraints(z)
        f = nlp.objective(z)
        val = f + lam @ c + 0.5 * rho * (c @ c)
        grad = nlp.objective_gradient(z) + nlp.constraint_vjp(z, lam + rho * c)
        if not (np.isfinite(val) and np.all(np.isfinite(grad))):
            raise NumericFailure("non-finite augmented Lagrangian")
        return val, grad

    hess_fn = getattr(nlp, "hessian", None)
    blocks = getattr(nlp, "blocks", None)
    use_newton = config.inner_method == "newton" or (
        config.inner_method == "auto" and hess_fn is not None)
    if use_newton and hess_fn is None:
        from .errors import ConfigError
        raise ConfigError("inner_method='newton' needs an NLP with a hessian model")

    def augmented_hessian(z):
        c = nlp.equality_constraints(z)
        J = nlp.constraint_jacobian(z)
        JtJ = (J.T @ J).toarray() if hasattr(J, "toarray") else J.T @ J
        return hess_fn(z, lam + rho * c) + rho * JtJ

    def result(status, pg, message=""):
        c = nlp.equality_constraints(x)
        return SolveResult(status=status, iterations=total_inner,
                           objective=float(nlp.objective(x)),
                           max_defect=float(np.max(np.abs(c), initial=0.0)),
                           grad_norm=pg, x=x.copy(), multipliers=lam.copy(),
                           history=history, line_search=ls_log,
                           clamped_initial=clamped, message=message)

    omega = 1.0 / rho                     # inner stationarity target
    eta = 1.0 / rho ** 0.1                # feasibility target
    prev_feas = np.inf
    pg = np.inf
    for outer in range(config.max_outer_iterations):
        inner_tol = max(omega, config.gradient_tolerance)
        try:
            if use_newton:
                x, _, _, pg, n_inner, stalled = minimize_box_newton(
                    augmented, augmented_hessian, x, lower, upper, inner_tol,
                    config.max_inner_iterations, config, ls_log, blocks)
            else:
                x, _, _, pg, n_inner, stalled = minimize_box(
                    augmented, x, lower, upper, inner_tol, config.max_inner_iterations,
                    config, ls_log)
        except NumericFailure as exc:
            return result(NUMERIC_FAILURE, pg, f"outer iteration {outer}: {exc}")
        total_inner += n_inner
        c = nlp.equality_constraints(x)
        feas = float(np.max(np.abs(c), initial=0.0))

        if feas <= max(eta, config.defect_tolerance) and feas <= prev_feas:
            # stationarity of L_A at old multipliers == of the Lagrangian at new
            lam = lam + rho * c
            if feas <= config.defect_tolerance and pg <= config.gradient_tolerance:
                history.append(HistoryEntry(outer, float(nlp.objective(x)), feas, rho, pg, n_inner))
                return result(CONVERGED, pg)
            eta = max(eta / rho ** 0.9, 0.1 * config.defect_tolerance)
            omega = max(omega / rho, 0.1 * config.gradient_tolerance)
        elif rho < config.max_penalty:
            rho = min(rho * config.penalty_growth, config.max_penalty)
            eta = max(1.0 / rho ** 0.1, 0.1 * config.defect_tolerance)
            omega = max(1.0 / rho, 0.1 * config.gradient_tolerance)
        history.append(HistoryEntry(outer, float(nlp.objective(x)), feas, rho, pg, n_inner))
        log.debug("outer %d: f=%.6g feas=%.3e rho=%.1e pg=%.3e inner=%d",
                  outer, history[-1].objective, feas, rho, pg, n_inner)
        prev_feas = min(prev_feas, feas)
        if stalled and (n_inner == 0 or feas <= config.defect_tolerance):
            status = FEASIBLE_NOT_STATIONARY if feas <= config.defect_tolerance else ITERATION_CAP
            return result(status, pg, "inner iteration stopped making progress")

    c = nlp.equality_constraints(x)
    feas = float(np.max(np.abs(c), initial=0.0))
    status = FEASIBLE_NOT_STATIONARY if feas <= config.defect_tolerance else ITERATION_CAP
    return result(status, pg)

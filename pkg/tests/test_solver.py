import csv
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import shipped_spec
from robust_trajopt.dynamics import make_double_integrator
from robust_trajopt.errors import ConfigError
from robust_trajopt.solver import (CONVERGED, FEASIBLE_NOT_STATIONARY, ITERATION_CAP,
                                   NUMERIC_FAILURE, SolverConfig, project_to_box,
                                   projected_gradient_norm, solve)
from robust_trajopt.transcription import ProblemSpec, build_nlp, defects, unpack, zero_guess

TIGHT = dict(defect_tolerance=1e-10, gradient_tolerance=1e-10)


def quadratic_nlp(H, b, lower=None, upper=None, with_hessian=False):
    n = len(b)
    return SimpleNamespace(
        objective=lambda x: 0.5 * x @ H @ x - b @ x,
        objective_gradient=lambda x: H @ x - b,
        equality_constraints=lambda x: np.zeros(0),
        constraint_jacobian=lambda x: np.zeros((0, n)),
        constraint_vjp=lambda x, y: np.zeros(n),
        hessian=(lambda x, y: H) if with_hessian else None,
        lower=np.full(n, -np.inf) if lower is None else lower,
        upper=np.full(n, np.inf) if upper is None else upper,
        n_vars=n, n_constraints=0,
    )


def di_spec(T=20, alpha=0.0):
    return ProblemSpec(model=make_double_integrator(), T=T, dt=0.1, x0=[1.0, 0.0],
                       x_goal=[0.0, 0.0], Q=[1.0, 1.0], R=[1.0], Q_terminal=[10.0, 10.0],
                       alpha=alpha, S=[4.0, 1.0])


def kkt_oracle(spec):
    """Dense equality-constrained QP for the linear-quadratic instance (W excluded)."""
    n, nu, T, dt = 2, 1, spec.T, spec.dt
    A = np.array([[1.0, dt], [0.0, 1.0]])
    B = np.array([[0.0], [dt]])
    nz = (T + 1) * n + T * nu
    H = np.zeros((nz, nz))
    g = np.zeros(nz)
    for k in range(T + 1):
        Qk = spec.Q if k < T else spec.Q_terminal
        s = slice(k * n, (k + 1) * n)
        H[s, s] = 2 * Qk
        g[s] = -2 * Qk @ spec.x_goal
    for k in range(T):
        s = (T + 1) * n + k * nu
        H[s:s + nu, s:s + nu] = 2 * spec.R
    rows = []
    rhs = []
    for k in range(T):
        r = np.zeros((n, nz))
        r[:, (k + 1) * n:(k + 2) * n] = np.eye(n)
        r[:, k * n:(k + 1) * n] = -A
        r[:, (T + 1) * n + k * nu:(T + 1) * n + (k + 1) * nu] = -B
        rows.append(r)
        rhs.append(np.zeros(n))
    pin = np.zeros((n, nz))
    pin[:, :n] = np.eye(n)
    rows.append(pin)
    rhs.append(spec.x0)
    C, d = np.vstack(rows), np.concatenate(rhs)
    K = np.block([[H, C.T], [C, np.zeros((len(C), len(C)))]])
    sol = np.linalg.solve(K, np.concatenate([-g, d]))[:nz]
    return sol[:(T + 1) * n].reshape(T + 1, n), sol[(T + 1) * n:].reshape(T, nu)


class TestQuadratic:
    @pytest.mark.parametrize("with_hessian", [False, True])
    def test_unconstrained_minimiser(self, rng, with_hessian):
        X = rng.standard_normal((6, 6))
        H = X @ X.T + np.eye(6)
        b = rng.standard_normal(6)
        # below ~1e-9 the achievable decrease drops under roundoff in f, so
        # Armijo cannot accept further steps; lambda_min(H) >= 1 keeps the
        # position error below the stationarity tolerance
        cfg = SolverConfig(defect_tolerance=1e-10, gradient_tolerance=1e-9)
        res = solve(quadratic_nlp(H, b, with_hessian=with_hessian), cfg)
        assert res.status == CONVERGED
        np.testing.assert_allclose(res.x, np.linalg.solve(H, b), atol=1e-8)
        assert res.iterations <= 100

    def test_active_bound(self):
        H = np.eye(2)
        b = np.array([3.0, -0.5])
        res = solve(quadratic_nlp(H, b, lower=np.array([-1.0, -1.0]), upper=np.array([1.0, 1.0])),
                    SolverConfig(**TIGHT))
        np.testing.assert_allclose(res.x, [1.0, -0.5], atol=1e-10)

    def test_initial_point_clamped(self):
        res = solve(quadratic_nlp(np.eye(1), np.zeros(1), lower=np.array([-1.0]),
                                  upper=np.array([1.0])), SolverConfig(**TIGHT), initial=[5.0])
        assert res.clamped_initial

    def test_non_finite_objective_reports_status(self):
        nlp = quadratic_nlp(np.eye(2), np.zeros(2))
        nlp.objective = lambda x: np.nan
        res = solve(nlp, SolverConfig(), initial=np.ones(2))
        assert res.status == NUMERIC_FAILURE
        assert "outer iteration 0" in res.message

    def test_iteration_cap(self):
        H = np.diag([1.0, 1e4])
        res = solve(quadratic_nlp(H, np.ones(2)),
                    SolverConfig(max_outer_iterations=1, max_inner_iterations=1,
                                 inner_method="lbfgs", **TIGHT), initial=[5.0, 5.0])
        assert res.status in (ITERATION_CAP, FEASIBLE_NOT_STATIONARY)


class TestTrajectory:
    def test_double_integrator_kkt_oracle(self):
        spec = di_spec()
        res = solve(build_nlp(spec), SolverConfig(**TIGHT), zero_guess(spec))
        assert res.status == CONVERGED
        X, U, _ = unpack(spec, res.x)
        X_ref, U_ref = kkt_oracle(spec)
        np.testing.assert_allclose(X, X_ref, atol=1e-6)
        np.testing.assert_allclose(U, U_ref, atol=1e-6)

    def test_converged_invariant(self):
        spec = di_spec(T=30, alpha=1.0)
        cfg = SolverConfig()
        res = solve(build_nlp(spec), cfg, zero_guess(spec))
        assert res.status == CONVERGED
        assert res.max_defect <= cfg.defect_tolerance
        assert res.grad_norm <= cfg.gradient_tolerance
        assert np.max(np.abs(defects(spec, res.x))) == res.max_defect

    def test_deterministic_history(self):
        spec = di_spec(T=30, alpha=1.0)
        a = solve(build_nlp(spec), SolverConfig(), zero_guess(spec))
        b = solve(build_nlp(spec), SolverConfig(), zero_guess(spec))
        assert a.history == b.history
        assert a.x.tobytes() == b.x.tobytes()

    @pytest.mark.parametrize("method", ["newton", "lbfgs"])
    def test_sufficient_decrease_every_step(self, method):
        spec = shipped_spec("pendulum", T=30, alpha=1.0)
        res = solve(build_nlp(spec), SolverConfig(max_outer_iterations=4, inner_method=method),
                    zero_guess(spec))
        assert res.line_search
        for before, after, rhs in res.line_search:
            assert after <= rhs < before

    def test_bounds_and_feasibility_history(self, pipeline):
        run = pipeline("pendulum")
        X = np.loadtxt(run.dir / "solution.csv", delimiter=",", skiprows=1, usecols=(1, 2))
        with open(run.dir / "solution.csv") as fh:
            U = [float(r["u0"]) for r in csv.DictReader(fh) if r["u0"]]
        assert np.all(np.abs(U) <= 1.7)
        assert X.shape == (121, 2)
        hist = np.loadtxt(run.dir / "history.csv", delimiter=",", skiprows=1)
        feas, rho = hist[:, 2], hist[:, 3]
        for j in range(len(hist) - 1):
            assert feas[j + 1] <= feas[j] or rho[j + 1] > rho[j]


class TestConfig:
    @pytest.mark.parametrize("kw", [{"defect_tolerance": 0}, {"penalty_growth": 1.0},
                                    {"backtracking_factor": 1.5}, {"inner_method": "bfgs"},
                                    {"max_outer_iterations": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            SolverConfig(**kw)

    def test_newton_without_hessian(self):
        with pytest.raises(ConfigError):
            solve(quadratic_nlp(np.eye(1), np.ones(1)), SolverConfig(inner_method="newton"))


class TestProjection:
    def test_control_limit(self):
        assert project_to_box(np.array([2.0]), -1.7, 1.7)[0] == 1.7

    def test_inside_is_identity(self):
        v = np.array([0.3, -1.2])
        np.testing.assert_array_equal(project_to_box(v, -1.7, 1.7), v)

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=10), st.floats(-10, 0),
           st.floats(0, 10))
    def test_idempotent(self, values, lo, hi):
        v = np.array(values)
        once = project_to_box(v, lo, hi)
        assert np.array_equal(project_to_box(once, lo, hi), once)
        assert np.all((once >= lo) & (once <= hi))

    def test_projected_gradient_norm(self):
        # gradient pushing out of an active bound does not count
        assert projected_gradient_norm(np.array([1.0]), np.array([-5.0]), -1.0, 1.0) == 0.0
        assert projected_gradient_norm(np.array([0.0]), np.array([0.5]), -1.0, 1.0) == 0.5

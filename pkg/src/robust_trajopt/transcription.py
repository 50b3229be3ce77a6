"""Direct transcription of the robust trajectory optimisation problem.

Decision vector layout (row-major blocks, in this order)::

    X : (T+1, n_x)   knot states, x_0 pinned by equal bounds
    U : (T, n_u)     knot controls
    W : (n_u, n_x)   static feedback gain shared by all knots

The objective is the quadratic tracking cost plus ``alpha`` times the sum of
the worst-case deviations d_max over knots ``k = 0 .. T-1`` (the knots that
carry a control). Dynamics enter as Euler defects
``x_{k+1} - x_k - dt f(x_k, u_k) = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
import scipy.sparse as sp

from .dynamics import DynamicsModel, discrete_jacobians, step_euler
from .errors import ConfigError, NumericFailure
from .robust_metric import d_max_batch, ellipsoid_diag, gradient_blocks

JAC_FD_STEP = 1e-6


def _as_matrix(value, n, name, errors):
    a = np.asarray(value, dtype=float)
    if a.ndim == 1:
        if a.size != n:
            errors.append(f"{name} diagonal must have length {n}, got {a.size}")
            return np.eye(n)
        a = np.diag(a)
    if a.shape != (n, n):
        errors.append(f"{name} must be {n}x{n}, got shape {a.shape}")
        return np.eye(n)
    return a


def _is_psd(a, strict=False):
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-12:
        return False
    w = np.linalg.eigvalsh(a)
    return bool(w.min() > 0) if strict else bool(w.min() >= -1e-12)


@dataclass
class ProblemSpec:
    """Data for one robust trajectory optimisation instance.

    Matrices may be given as full arrays or as diagonals. ``S`` is either a
    single ellipsoid diagonal shared by all knots or one per knot, shape
    ``(T, n_x)``. ``state_bounds``/``control_bounds`` default to the model's
    boxes; ``gain_bounds`` (a ``(lo, hi)`` scalar pair) to unbounded.
    """

    model: DynamicsModel
    T: int
    dt: float
    x0: np.ndarray
    x_goal: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Q_terminal: np.ndarray
    alpha: float = 0.0
    S: np.ndarray = None
    P: np.ndarray = None
    state_bounds: Optional[np.ndarray] = None
    control_bounds: Optional[np.ndarray] = None
    gain_bounds: Optional[tuple] = None
    epsilon: Optional[np.ndarray] = None

    def __post_init__(self):
        m = self.model
        n, nu = m.n_x, m.n_u
        errors = []
        if not isinstance(self.T, (int, np.integer)) or self.T < 2:
            errors.append(f"horizon T must be an integer >= 2, got {self.T!r}")
        if not (np.isfinite(self.dt) and self.dt > 0):
            errors.append(f"timestep dt must be positive, got {self.dt!r}")
        self.x0 = np.asarray(self.x0, dtype=float)
        self.x_goal = np.asarray(self.x_goal, dtype=float)
        for name in ("x0", "x_goal"):
            if getattr(self, name).shape != (n,):
                errors.append(f"{name} must have length {n}")
        self.Q = _as_matrix(self.Q, n, "Q", errors)
        self.R = _as_matrix(self.R, nu, "R", errors)
        self.Q_terminal = _as_matrix(self.Q_terminal, n, "Q_terminal", errors)
        self.P = np.eye(n) if self.P is None else _as_matrix(self.P, n, "P", errors)
        if not _is_psd(self.Q):
            errors.append("Q must be symmetric positive semidefinite")
        if not _is_psd(self.Q_terminal):
            errors.append("Q_terminal must be symmetric positive semidefinite")
        if not _is_psd(self.R, strict=True):
            errors.append("R must be symmetric positive definite")
        if not _is_psd(self.P):
            errors.append("P must be symmetric positive semidefinite")
        if not (np.isfinite(self.alpha) and self.alpha >= 0):
            errors.append(f"alpha must be nonnegative, got {self.alpha!r}")
        self.alpha = float(self.alpha)

        S = np.ones(n) if self.S is None else np.asarray(self.S, dtype=float)
        try:
            S = ellipsoid_diag(S)
        except ConfigError as exc:
            errors.extend(exc.violations)
            S = np.ones(n)
        if S.shape == (n,) and isinstance(self.T, (int, np.integer)) and self.T >= 2:
            S = np.tile(S, (self.T, 1))
        elif S.shape != (self.T, n):
            errors.append(f"S must be a length-{n} diagonal or have shape (T, {n})")
        self.S = S

        self.state_bounds = np.array(m.state_bounds if self.state_bounds is None
                                     else self.state_bounds, dtype=float)
        self.control_bounds = np.array(m.control_bounds if self.control_bounds is None
                                       else self.control_bounds, dtype=float)
        for name, size in (("state_bounds", n), ("control_bounds", nu)):
            b = getattr(self, name)
            if b.shape != (size, 2):
                errors.append(f"{name} must have shape ({size}, 2)")
            elif np.any(b[:, 0] > b[:, 1]):
                errors.append(f"{name}: lower bound exceeds upper bound")
        if self.gain_bounds is not None:
            lo, hi = (float(z) for z in self.gain_bounds)
            if lo > hi:
                errors.append("gain_bounds: lower bound exceeds upper bound")
            self.gain_bounds = (lo, hi)
        if self.epsilon is not None:
            eps = np.broadcast_to(np.asarray(self.epsilon, dtype=float), (self.T,)).copy()
            if np.any(eps <= 0):
                errors.append("epsilon tolerances must be positive")
            self.epsilon = eps
        if (self.x0.shape == (n,) and self.state_bounds.shape == (n, 2)
                and np.any((self.x0 < self.state_bounds[:, 0]) | (self.x0 > self.state_bounds[:, 1]))):
            errors.append("x0 lies outside the state bounds")
        if errors:
            raise ConfigError(errors)

    @property
    def n_vars(self):
        m = self.model
        return (self.T + 1) * m.n_x + self.T * m.n_u + m.n_u * m.n_x

    @property
    def n_defects(self):
        return self.T * self.model.n_x


class DecisionVector(NamedTuple):
    X: np.ndarray
    U: np.ndarray
    W: np.ndarray


def pack(X, U, W) -> np.ndarray:
    return np.concatenate([np.ravel(X), np.ravel(U), np.ravel(W)]).astype(float)


def unpack(spec: ProblemSpec, flat) -> DecisionVector:
    flat = np.asarray(flat, dtype=float)
    n, nu, T = spec.model.n_x, spec.model.n_u, spec.T
    if flat.shape != (spec.n_vars,):
        raise ValueError(f"decision vector must have length {spec.n_vars}, got {flat.shape}")
    i = (T + 1) * n
    j = i + T * nu
    return DecisionVector(flat[:i].reshape(T + 1, n), flat[i:j].reshape(T, nu),
                          flat[j:].reshape(nu, n))


def zero_guess(spec: ProblemSpec) -> np.ndarray:
    """All-zero states, controls and gain, with x_0 set to the initial state."""
    v = np.zeros(spec.n_vars)
    v[:spec.model.n_x] = spec.x0
    return v


def rollout_guess(spec: ProblemSpec, U=None, W=None) -> np.ndarray:
    """Dynamically consistent guess from simulating ``U`` forward from x_0."""
    m = spec.model
    U = np.zeros((spec.T, m.n_u)) if U is None else np.asarray(U, dtype=float)
    X = np.empty((spec.T + 1, m.n_x))
    X[0] = spec.x0
    for k in range(spec.T):
        X[k + 1] = step_euler(m, X[k], U[k], spec.dt)
    W = np.zeros((m.n_u, m.n_x)) if W is None else W
    return pack(X, U, W)


# --- cost ----------------------------------------------------------------------

def quadratic_cost(spec: ProblemSpec, x, u=None) -> float:
    """Stage cost ``|x - x_goal|_Q^2 + |u|_R^2``; terminal cost when ``u`` is None."""
    e = np.asarray(x, dtype=float) - spec.x_goal
    if u is None:
        return float(e @ spec.Q_terminal @ e)
    u = np.asarray(u, dtype=float)
    return float(e @ spec.Q @ e + u @ spec.R @ u)


def trajectory_cost(spec: ProblemSpec, X, U) -> float:
    E = X - spec.x_goal
    stage = np.einsum("ki,ij,kj->", E[:-1], spec.Q, E[:-1]) + np.einsum("ki,ij,kj->", U, spec.R, U)
    return float(stage + E[-1] @ spec.Q_terminal @ E[-1])


def _cost_gradient(spec, X, U):
    E = X - spec.x_goal
    gX = 2.0 * E @ spec.Q.T
    gX[-1] = 2.0 * spec.Q_terminal @ E[-1]
    return gX, 2.0 * U @ spec.R.T


# --- robust penalty ------------------------------------------------------------

def knot_jacobians(spec: ProblemSpec, X, U):
    """Discrete ``A_k, B_k`` at the control-carrying knots."""
    return discrete_jacobians(spec.model, X[:-1], U, spec.dt)


def dmax_profile(spec: ProblemSpec, X, U, W):
    """Per-knot :class:`BatchTerm` (d_max, maximiser, eigengap)."""
    A, B = knot_jacobians(spec, X, U)
    try:
        return d_max_batch(A, B, W, spec.S, spec.P)
    except NumericFailure:
        # locate the offending knot for the error message
        for k in range(spec.T):
            try:
                d_max_batch(A[k:k + 1], B[k:k + 1], W, spec.S[k], spec.P)
            except NumericFailure as exc:
                raise NumericFailure("d_max evaluation failed", knot=k,
                                     residual=exc.residual) from exc
        raise


def robust_penalty(spec: ProblemSpec, X, U, W) -> float:
    if spec.alpha == 0.0:
        return 0.0
    return spec.alpha * float(np.sum(dmax_profile(spec, X, U, W).d_max))


def total_objective(spec: ProblemSpec, v) -> float:
    """Trajectory cost plus ``alpha`` times the summed worst-case deviations."""
    X, U, W = unpack(spec, v)
    return trajectory_cost(spec, X, U) + robust_penalty(spec, X, U, W)


def _jacobian_derivatives(spec, X, U, h=JAC_FD_STEP):
    """Central differences of ``A_k, B_k`` with respect to ``z_k = (x_k, u_k)``.

    Returns ``dA`` of shape ``(T, n_z, n_x, n_x)`` and ``dB`` of shape
    ``(T, n_z, n_x, n_u)``.
    """
    m = spec.model
    Xk = X[:-1]
    n, nu = m.n_x, m.n_u
    dA = np.empty((spec.T, n + nu, n, n))
    dB = np.empty((spec.T, n + nu, n, nu))
    for i in range(n + nu):
        if i < n:
            step = h * np.maximum(1.0, np.abs(Xk[:, i]))
            Ap, Bp = discrete_jacobians(m, Xk + step[:, None] * _unit(n, i), U, spec.dt)
            Am, Bm = discrete_jacobians(m, Xk - step[:, None] * _unit(n, i), U, spec.dt)
        else:
            j = i - n
            step = h * np.maximum(1.0, np.abs(U[:, j]))
            Ap, Bp = discrete_jacobians(m, Xk, U + step[:, None] * _unit(nu, j), spec.dt)
            Am, Bm = discrete_jacobians(m, Xk, U - step[:, None] * _unit(nu, j), spec.dt)
        dA[:, i] = (Ap - Am) / (2.0 * step[:, None, None])
        dB[:, i] = (Bp - Bm) / (2.0 * step[:, None, None])
    return dA, dB


def _unit(n, i):
    e = np.zeros(n)
    e[i] = 1.0
    return e


def _knots_penalty(spec, knots, Z, W):
    n = spec.model.n_x
    A, B = discrete_jacobians(spec.model, Z[:, :n], Z[:, n:], spec.dt)
    return d_max_batch(A, B, W, spec.S[knots], spec.P).d_max


def _knot_penalty_fd(spec, knots, X, U, W, h=1e-6):
    """Central-difference gradient of d_max at the given knots (degenerate fallback).

    Returns ``gz`` of shape ``(len(knots), n_x + n_u)`` and per-knot ``gW``.
    """
    Z = np.concatenate([X[knots], U[knots]], axis=1)
    gz = np.zeros_like(Z)
    for i in range(Z.shape[1]):
        step = h * np.maximum(1.0, np.abs(Z[:, i]))
        Zp, Zm = Z.copy(), Z.copy()
        Zp[:, i] += step
        Zm[:, i] -= step
        gz[:, i] = (_knots_penalty(spec, knots, Zp, W) - _knots_penalty(spec, knots, Zm, W)) / (2 * step)
    gW = np.zeros((len(knots),) + W.shape)
    for idx in np.ndindex(W.shape):
        step = h * max(1.0, abs(W[idx]))
        Wp, Wm = W.copy(), W.copy()
        Wp[idx] += step
        Wm[idx] -= step
        gW[(slice(None),) + idx] = (_knots_penalty(spec, knots, Z, Wp)
                                    - _knots_penalty(spec, knots, Z, Wm)) / (2 * step)
    return gz, gW


def penalty_gradient(spec: ProblemSpec, X, U, W):
    """Gradient of ``sum_k d_max,k`` (without ``alpha``) and the degenerate knots.

    Non-degenerate knots use the envelope gradient chained through
    finite-differenced ``dA/dz``, ``dB/dz``; degenerate knots are
    differenced in full.
    """
    m = spec.model
    n = m.n_x
    A, B = knot_jacobians(spec, X, U)
    term = d_max_batch(A, B, W, spec.S, spec.P)
    gA, gB, gW_k = gradient_blocks(term.M, B, W, spec.P, term.delta_max)
    dA, dB = _jacobian_derivatives(spec, X, U)
    gz = np.einsum("kij,kzij->kz", gA, dA) + np.einsum("kij,kzij->kz", gB, dB)
    degenerate = np.flatnonzero(term.degenerate)
    if degenerate.size:
        gz[degenerate], gW_k[degenerate] = _knot_penalty_fd(spec, degenerate, X, U, W)
    gX = np.zeros_like(X)
    gX[:-1] = gz[:, :n]
    return gX, gz[:, n:], gW_k.sum(axis=0), degenerate


def objective_gradient(spec: ProblemSpec, v, return_degenerate=False):
    X, U, W = unpack(spec, v)
    gX, gU = _cost_gradient(spec, X, U)
    gW = np.zeros_like(W)
    degenerate = np.array([], dtype=int)
    if spec.alpha != 0.0:
        pX, pU, pW, degenerate = penalty_gradient(spec, X, U, W)
        gX += spec.alpha * pX
        gU += spec.alpha * pU
        gW += spec.alpha * pW
    g = pack(gX, gU, gW)
    return (g, degenerate) if return_degenerate else g


# --- dynamics defects ------------------------------------------------------------

def defects(spec: ProblemSpec, v) -> np.ndarray:
    """Stacked ``x_{k+1} - step_euler(x_k, u_k)`` for ``k = 0 .. T-1``."""
    X, U, _ = unpack(spec, v)
    fx = X[:-1] + spec.dt * spec.model.vector_field(X[:-1], U)
    return (X[1:] - fx).ravel()


def _defect_blocks(spec, v):
    X, U, _ = unpack(spec, v)
    return knot_jacobians(spec, X, U)


def defect_vjp(spec: ProblemSpec, v, y) -> np.ndarray:
    """``J(v)' y`` for the defect Jacobian ``J`` without forming it."""
    A, B = _defect_blocks(spec, v)
    m = spec.model
    Y = np.asarray(y, dtype=float).reshape(spec.T, m.n_x)
    gX = np.zeros((spec.T + 1, m.n_x))
    gX[1:] += Y
    gX[:-1] -= np.einsum("kij,ki->kj", A, Y)
    gU = -np.einsum("kij,ki->kj", B, Y)
    return pack(gX, gU, np.zeros((m.n_u, m.n_x)))


def defect_jacobian(spec: ProblemSpec, v) -> sp.csr_matrix:
    """Sparse defect Jacobian; row block k touches x_k, x_{k+1} and u_k only."""
    A, B = _defect_blocks(spec, v)
    n, nu, T = spec.model.n_x, spec.model.n_u, spec.T
    rows, cols, vals = [], [], []
    u0 = (T + 1) * n
    r = np.arange(n)
    for k in range(T):
        rr = k * n + r
        blocks = [((k + 1) * n, np.eye(n)), (k * n, -A[k]), (u0 + k * nu, -B[k])]
        for c0, blk in blocks:
            R_, C_ = np.meshgrid(rr, c0 + np.arange(blk.shape[1]), indexing="ij")
            rows.append(R_.ravel())
            cols.append(C_.ravel())
            vals.append(blk.ravel())
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(spec.n_defects, spec.n_vars))


def _index_blocks(spec):
    n, nu, T = spec.model.n_x, spec.model.n_u, spec.T
    u0 = (T + 1) * n
    k = np.arange(T)[:, None]
    zidx = np.concatenate([k * n + np.arange(n), u0 + k * nu + np.arange(nu)], axis=1)
    widx = u0 + T * nu + np.arange(nu * n)
    return zidx, widx


def _jacobian_second_derivatives(spec, X, U, h=1e-4):
    """Central second differences of ``A_k, B_k`` in ``z_k = (x_k, u_k)``.

    Shapes ``(T, n_z, n_z, n_x, n_x)`` and ``(T, n_z, n_z, n_x, n_u)``.
    """
    m = spec.model
    n, nu = m.n_x, m.n_u
    Z = np.concatenate([X[:-1], U], axis=1)
    nz = n + nu
    step = h * np.maximum(1.0, np.abs(Z))               # (T, n_z)

    def jac(Zp):
        return discrete_jacobians(m, Zp[:, :n], Zp[:, n:], spec.dt)

    d2A = np.empty((spec.T, nz, nz, n, n))
    d2B = np.empty((spec.T, nz, nz, n, nu))
    for a in range(nz):
        for b in range(a, nz):
            ea = np.zeros(nz)
            eb = np.zeros(nz)
            ea[a] = 1.0
            eb[b] = 1.0
            da = step[:, a:a + 1] * ea
            db = step[:, b:b + 1] * eb
            pp, pm, mp, mm = jac(Z + da + db), jac(Z + da - db), jac(Z - da + db), jac(Z - da - db)
            denom = (4.0 * step[:, a] * step[:, b])[:, None, None]
            d2A[:, a, b] = d2A[:, b, a] = (pp.A - pm.A - mp.A + mm.A) / denom
            d2B[:, a, b] = d2B[:, b, a] = (pp.B - pm.B - mp.B + mm.B) / denom
    return d2A, d2B


def penalty_hessian_blocks(spec: ProblemSpec, X, U, W, dA=None, dB=None):
    """Per-knot Hessian of d_max in ``(x_k, u_k, vec W)``, shape ``(T, n_a, n_a)``.

    Second-order perturbation of the top eigenvalue of ``G = S^-1/2 M' P M S^-1/2``:
    ``v1' G_ab v1 + 2 sum_j (v_j' G_a v1)(v_j' G_b v1) / (lam_1 - lam_j)``.
    The full eigenbasis here only shapes the curvature model; the d_max
    values themselves come from :func:`d_max_batch`.
    """
    m = spec.model
    n, nu, T = m.n_x, m.n_u, spec.T
    nz, nw = n + nu, nu * n
    if dA is None:
        dA, dB = _jacobian_derivatives(spec, X, U)
    d2A, d2B = _jacobian_second_derivatives(spec, X, U)
    A, B = knot_jacobians(spec, X, U)
    M = A + B @ W
    P = spec.P
    sinv = 1.0 / np.sqrt(spec.S)                        # (T, n)
    Ms = M * sinv[:, None, :]
    G = np.swapaxes(Ms, 1, 2) @ P @ Ms
    lam, V = np.linalg.eigh(0.5 * (G + np.swapaxes(G, 1, 2)))
    Uo = V * sinv[:, :, None]                           # columns in original coordinates
    y = Uo[:, :, -1]
    lam1 = lam[:, -1]

    # first derivatives of M: z-directions then W_pq directions
    Ma = np.empty((T, nz + nw, n, n))
    Ma[:, :nz] = dA + dB @ W
    for p in range(nu):
        for q in range(n):
            Ma[:, nz + p * n + q] = 0.0
            Ma[:, nz + p * n + q, :, q] = B[:, :, p]
    # second derivatives of M
    Mab = np.zeros((T, nz + nw, nz + nw, n, n))
    Mab[:, :nz, :nz] = d2A + d2B @ W
    for p in range(nu):
        for q in range(n):
            j = nz + p * n + q
            Mab[:, :nz, j, :, q] = dB[:, :, :, p]
            Mab[:, j, :nz, :, q] = dB[:, :, :, p]

    r = np.einsum("kij,kj->ki", M, y)
    Pr = r @ P.T
    May = np.einsum("kaij,kj->kai", Ma, y)
    H = 2.0 * np.einsum("kai,ij,kbj->kab", May, P, May)
    H += 2.0 * np.einsum("kabij,kj,ki->kab", Mab, y, Pr)
    if n > 1:
        Uj = Uo[:, :, :-1]
        gap = np.maximum(lam1[:, None] - lam[:, :-1], 1e-8 * np.maximum(1.0, lam1)[:, None])
        MaU = np.einsum("kaij,kjl->kail", Ma, Uj)
        MU = np.einsum("kij,kjl->kil", M, Uj)
        c = np.einsum("kail,ki->kal", MaU, Pr) + np.einsum("kil,ij,kaj->kal", MU, P, May)
        H += 2.0 * np.einsum("kal,kbl,kl->kab", c, c, 1.0 / gap)
    return 0.5 * (H + np.swapaxes(H, 1, 2))


def lagrangian_hessian(spec: ProblemSpec, v, y) -> np.ndarray:
    """Dense model of ``hess(f) + sum_i y_i hess(c_i)``.

    Exact up to the finite differences used for the first and second
    derivatives of ``A, B`` (third derivatives of the vector field).
    """
    X, U, W = unpack(spec, v)
    n, nu, T = spec.model.n_x, spec.model.n_u, spec.T
    N = spec.n_vars
    zidx, widx = _index_blocks(spec)
    H = np.zeros((N, N))
    xi = zidx[:, :n]
    ui = zidx[:, n:]
    H[xi[:, :, None], xi[:, None, :]] += 2.0 * spec.Q
    H[ui[:, :, None], ui[:, None, :]] += 2.0 * spec.R
    last = T * n + np.arange(n)
    H[np.ix_(last, last)] += 2.0 * spec.Q_terminal

    dA, dB = _jacobian_derivatives(spec, X, U)
    dAB = np.concatenate([dA, dB], axis=-1)            # (T, n_z, n_x, n_z)
    Y = np.asarray(y, dtype=float).reshape(T, n)
    Hz = -np.einsum("ki,kaib->kab", Y, dAB)
    Hz = 0.5 * (Hz + np.swapaxes(Hz, 1, 2))

    if spec.alpha != 0.0:
        Hk = spec.alpha * penalty_hessian_blocks(spec, X, U, W, dA, dB)
        nz = n + nu
        Hz += Hk[:, :nz, :nz]
        H[zidx[:, :, None], widx[None, None, :]] += Hk[:, :nz, nz:]
        H[widx[None, :, None], zidx[:, None, :]] += Hk[:, nz:, :nz]
        H[np.ix_(widx, widx)] += Hk[:, nz:, nz:].sum(axis=0)
    H[zidx[:, :, None], zidx[:, None, :]] += Hz
    return H


def variable_bounds(spec: ProblemSpec):
    """Lower/upper bound vectors; x_0 is pinned by equal bounds."""
    n, nu, T = spec.model.n_x, spec.model.n_u, spec.T
    lo_x = np.tile(spec.state_bounds[:, 0], T + 1)
    hi_x = np.tile(spec.state_bounds[:, 1], T + 1)
    lo_x[:n] = hi_x[:n] = spec.x0
    lo_u = np.tile(spec.control_bounds[:, 0], T)
    hi_u = np.tile(spec.control_bounds[:, 1], T)
    gl, gh = spec.gain_bounds if spec.gain_bounds is not None else (-np.inf, np.inf)
    lo_w = np.full(nu * n, gl)
    hi_w = np.full(nu * n, gh)
    return np.concatenate([lo_x, lo_u, lo_w]), np.concatenate([hi_x, hi_u, hi_w])


@dataclass
class NlpFunctions:
    """Closures describing ``min f(v) s.t. c(v) = 0, lower <= v <= upper``."""

    objective: Callable
    objective_gradient: Callable
    equality_constraints: Callable
    constraint_jacobian: Callable
    constraint_vjp: Callable
    hessian: Optional[Callable]
    lower: np.ndarray
    upper: np.ndarray
    n_vars: int
    n_constraints: int
    spec: Optional[ProblemSpec] = field(default=None, repr=False)
    # variable groups for block-wise step safeguards: trajectory, then gain
    blocks: Optional[list] = field(default=None, repr=False)


def build_nlp(spec: ProblemSpec) -> NlpFunctions:
    lower, upper = variable_bounds(spec)
    n_traj = spec.n_vars - spec.model.n_u * spec.model.n_x
    return NlpFunctions(
        objective=lambda v: total_objective(spec, v),
        objective_gradient=lambda v: objective_gradient(spec, v),
        equality_constraints=lambda v: defects(spec, v),
        constraint_jacobian=lambda v: defect_jacobian(spec, v),
        constraint_vjp=lambda v, y: defect_vjp(spec, v, y),
        hessian=lambda v, y: lagrangian_hessian(spec, v, y),
        lower=lower, upper=upper,
        n_vars=spec.n_vars, n_constraints=spec.n_defects, spec=spec,
        blocks=[np.arange(n_traj), np.arange(n_traj, spec.n_vars)],
    )


def epsilon_report(spec: ProblemSpec, X, U, W) -> Optional[float]:
    """Fraction of knots whose d_max is within ``epsilon_k**2`` (diagnostic only)."""
    if spec.epsilon is None:
        return None
    d = dmax_profile(spec, X, U, W).d_max
    return float(np.mean(d <= spec.epsilon ** 2))


# --- verification helpers ---------------------------------------------------------

def random_decision_vector(spec: ProblemSpec, rng: np.random.Generator, gain_scale=5.0) -> np.ndarray:
    """Random point inside the variable bounds (infinite boxes replaced by +/-2)."""
    lower, upper = variable_bounds(spec)
    lo = np.where(np.isfinite(lower), lower, -2.0)
    hi = np.where(np.isfinite(upper), upper, 2.0)
    v = rng.uniform(lo, hi)
    w = slice(spec.n_vars - spec.model.n_u * spec.model.n_x, None)
    v[w] = np.clip(gain_scale * rng.uniform(-1, 1, v[w].size), lower[w], upper[w])
    return v


class GradientCheck(NamedTuple):
    relative_error: float
    degenerate_knots: np.ndarray


def check_gradient(spec: ProblemSpec, v, h=1e-6, gradient=None) -> GradientCheck:
    """Compare the analytic gradient with central differences of the objective.

    Entries coupled to degenerate knots (their ``x_k``, ``u_k`` and the gain
    block) are excluded from the error and the knots are reported instead.
    """
    v = np.asarray(v, dtype=float)
    if gradient is None:
        g, degenerate = objective_gradient(spec, v, return_degenerate=True)
    else:
        g = np.asarray(gradient, dtype=float)
        _, degenerate = objective_gradient(spec, v, return_degenerate=True)
    g_fd = np.empty_like(v)
    for i in range(v.size):
        step = h * max(1.0, abs(v[i]))
        vp, vm = v.copy(), v.copy()
        vp[i] += step
        vm[i] -= step
        g_fd[i] = (total_objective(spec, vp) - total_objective(spec, vm)) / (2 * step)
    mask = np.ones(v.size, dtype=bool)
    knots = np.asarray(degenerate, dtype=int)
    if knots.size:
        zidx, widx = _index_blocks(spec)
        mask[zidx[knots].ravel()] = False
        mask[widx] = False
    scale = max(float(np.max(np.abs(g_fd[mask]), initial=0.0)), 1e-12)
    err = float(np.max(np.abs(g[mask] - g_fd[mask]), initial=0.0)) / scale
    return GradientCheck(err, knots)

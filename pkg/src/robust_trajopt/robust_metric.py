"""Worst-case one-step deviation over an ellipsoid and its gradient.

For the closed-loop deviation map ``M = A + B W`` and the uncertainty set
``{d : d' S d <= 1}`` the worst weighted squared deviation is

    d_max = max ||M d||_P^2 = lambda_max(S^-1/2 M' P M S^-1/2)

and the maximiser is ``S^-1/2 v`` for the top unit eigenvector ``v``.
When the top eigenvalue is simple, the maximiser is unique and the gradient
of ``d_max`` is the partial gradient of ``||M d||_P^2`` with ``d`` frozen at
the maximiser (envelope/Danskin argument).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConfigError, DegenerateEigenvalueError, NumericFailure

EIG_TOL = 1e-12
EIG_MAX_ITER = 10_000
STALL_WINDOW = 32
STALL_FACTOR = 0.1
DEGENERACY_RTOL = 1e-8


class EigResult(NamedTuple):
    value: float
    vector: np.ndarray
    eigengap: float


class BatchTerm(NamedTuple):
    """Vectorised d_max evaluation over a leading batch axis."""
    M: np.ndarray          # (K, n_x, n_x)
    d_max: np.ndarray      # (K,)
    delta_max: np.ndarray  # (K, n_x), original coordinates
    eigengap: np.ndarray   # (K,)

    @property
    def degenerate(self):
        return self.eigengap <= degeneracy_threshold(self.d_max)


@dataclass
class RobustTerm:
    d_max: float
    delta_max: np.ndarray
    eigengap: float
    grad_A: Optional[np.ndarray]
    grad_B: Optional[np.ndarray]
    grad_W: Optional[np.ndarray]

    @property
    def degenerate(self) -> bool:
        return bool(self.eigengap <= degeneracy_threshold(self.d_max))


def degeneracy_threshold(lam):
    return DEGENERACY_RTOL * np.maximum(1.0, lam)


# --- small dense symmetric eigenproblems ---------------------------------------

def _start_vector(n, seed=12345):
    # fixed generic direction; a structured start (ones, e_1) is orthogonal
    # to the top eigenvector of too many simple matrices
    return np.random.default_rng(seed).standard_normal(n)


def _power_iteration(mats, tol, max_iter, window=STALL_WINDOW, start=None):
    """Batched power iteration for PSD matrices.

    Returns ``(lam, vec, residual, state)`` where state is 0 converged,
    1 stalled (slow residual decay), 2 hit the iteration cap.
    """
    N, n, _ = mats.shape
    if start is None:
        start = np.tile(_start_vector(n), (N, 1))
    v = start / np.linalg.norm(start, axis=1, keepdims=True)
    lam = np.zeros(N)
    res = np.full(N, np.inf)
    state = np.full(N, 2)
    checkpoint = np.full(N, np.inf)
    active = np.arange(N)
    for it in range(1, max_iter + 1):
        x = v[active]
        y = np.einsum("bij,bj->bi", mats[active], x)
        rq = np.einsum("bi,bi->b", x, y)
        e = y - rq[:, None] * x
        r = np.sqrt(np.einsum("bi,bi->b", e, e))
        lam[active] = rq
        res[active] = r
        ynorm = np.sqrt(np.einsum("bi,bi->b", y, y))
        done = (r <= tol * np.maximum(1.0, np.abs(rq))) | (ynorm == 0.0)
        grow = ~done
        v[active[grow]] = y[grow] / ynorm[grow, None]
        state[active[done]] = 0
        if it % window == 0:
            slow = grow & (r > STALL_FACTOR * checkpoint[active])
            state[active[slow]] = 1
            checkpoint[active] = r
            done = done | slow
        active = active[~done]
        if active.size == 0:
            break
    return lam, v, res, state


def jacobi_eigh(mats, tol=1e-15, max_sweeps=60):
    """Cyclic Jacobi rotations on a batch of symmetric matrices.

    Returns eigenvalues ``(N, n)`` (unsorted) and eigenvectors as columns
    ``(N, n, n)``.
    """
    a = np.array(mats, dtype=float, copy=True)
    squeeze = a.ndim == 2
    if squeeze:
        a = a[None]
    N, n, _ = a.shape
    V = np.tile(np.eye(n), (N, 1, 1))
    offmask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(a[:, offmask] ** 2, axis=1))
        scale = np.sqrt(np.sum(a ** 2, axis=(1, 2)))
        if np.all(off <= tol * np.maximum(scale, np.finfo(float).tiny)):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[:, p, q]
                rot = apq != 0.0
                theta = np.where(rot, (a[:, q, q] - a[:, p, p]) / np.where(rot, 2.0 * apq, 1.0), 0.0)
                t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
                t = np.where(rot, t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                c_, s_ = c[:, None], s[:, None]
                ap, aq = a[:, :, p].copy(), a[:, :, q].copy()
                a[:, :, p] = c_ * ap - s_ * aq
                a[:, :, q] = s_ * ap + c_ * aq
                ap, aq = a[:, p, :].copy(), a[:, q, :].copy()
                a[:, p, :] = c_ * ap - s_ * aq
                a[:, q, :] = s_ * ap + c_ * aq
                vp, vq = V[:, :, p].copy(), V[:, :, q].copy()
                V[:, :, p] = c_ * vp - s_ * vq
                V[:, :, q] = s_ * vp + c_ * vq
    else:
        raise NumericFailure("Jacobi eigensolver did not converge", residual=float(np.max(off)))
    w = np.diagonal(a, axis1=1, axis2=2).copy()
    if squeeze:
        return w[0], V[0]
    return w, V


def _fix_sign(v):
    """Make the first non-negligible component of each row positive."""
    mag = np.abs(v)
    first = np.argmax(mag > 1e-10 * mag.max(axis=-1, keepdims=True), axis=-1)
    sign = np.sign(np.take_along_axis(v, first[..., None], axis=-1))
    return v * np.where(sign == 0, 1.0, sign)


def max_eig_sym_batch(mats, tol=EIG_TOL, max_iter=EIG_MAX_ITER):
    """Top eigenpair and eigengap for each PSD matrix in a ``(N, n, n)`` batch."""
    mats = np.asarray(mats, dtype=float)
    if not np.all(np.isfinite(mats)):
        raise NumericFailure("non-finite matrix passed to eigensolver")
    N, n, _ = mats.shape
    lam, v, res, state = _power_iteration(mats, tol, max_iter)
    if np.any(state == 2):
        raise NumericFailure("power iteration hit the iteration cap",
                             residual=float(np.max(res[state == 2])))

    # second eigenvalue by deflation
    deflated = mats - lam[:, None, None] * np.einsum("bi,bj->bij", v, v)
    if n > 1:
        # start in the orthogonal complement of the converged vector
        w0 = np.tile(_start_vector(n, seed=54321), (N, 1))
        w0 -= np.einsum("bi,bi->b", w0, v)[:, None] * v
        lam2, _, res2, state2 = _power_iteration(deflated, tol, max_iter, start=w0)
        if np.any(state2 == 2):
            raise NumericFailure("power iteration hit the iteration cap",
                                 residual=float(np.max(res2[state2 == 2])))
    else:
        lam2, state2 = np.zeros(N), np.zeros(N, dtype=int)

    fallback = (state == 1) | (state2 == 1)
    if np.any(fallback):
        w, V = jacobi_eigh(mats[fallback])
        order = np.argsort(w, axis=1)
        top = order[:, -1]
        lam[fallback] = np.take_along_axis(w, top[:, None], axis=1)[:, 0]
        v[fallback] = np.take_along_axis(V, top[:, None, None], axis=2)[:, :, 0]
        lam2[fallback] = (np.take_along_axis(w, order[:, -2:-1], axis=1)[:, 0]
                          if n > 1 else 0.0)
    v = _fix_sign(v / np.linalg.norm(v, axis=1, keepdims=True))
    gap = np.maximum(lam - lam2, 0.0)
    return lam, v, gap


def max_eig_sym(matrix, tol=EIG_TOL, max_iter=EIG_MAX_ITER) -> EigResult:
    """Largest eigenvalue, unit eigenvector and eigengap of a symmetric PSD matrix.

    Power iteration from a fixed start vector; matrices whose residual stalls
    are finished with cyclic Jacobi rotations.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-10:
        raise ValueError("matrix is not symmetric")
    lam, v, gap = max_eig_sym_batch(a[None], tol=tol, max_iter=max_iter)
    return EigResult(float(lam[0]), v[0], float(gap[0]))


# --- d_max and its gradient ------------------------------------------------------

def ellipsoid_diag(S) -> np.ndarray:
    """Diagonal of an ellipsoid shape given as a vector or (batched) diagonal matrix."""
    S = np.asarray(S, dtype=float)
    if S.ndim >= 2 and S.shape[-1] == S.shape[-2]:
        diag = np.diagonal(S, axis1=-2, axis2=-1).copy()
        off = S - diag[..., None] * np.eye(S.shape[-1])
        if np.any(off != 0.0):
            raise ConfigError("ellipsoid shape S must be diagonal")
        S = diag
    if not np.all(np.isfinite(S)) or np.any(S <= 0):
        raise ConfigError("ellipsoid shape S must have strictly positive diagonal")
    return S


def closed_loop_map(A, B, W) -> np.ndarray:
    """``M = A + B W``; broadcasts over leading axes of A and B."""
    A, B, W = (np.asarray(z, dtype=float) for z in (A, B, W))
    n_x, n_u = B.shape[-2], B.shape[-1]
    if A.shape[-2:] != (n_x, n_x) or W.shape[-2:] != (n_u, n_x):
        raise ValueError(f"shape mismatch: A{A.shape}, B{B.shape}, W{W.shape}")
    return A + B @ W


def scaled_gram(M, S, P) -> np.ndarray:
    """``S^-1/2 M' P M S^-1/2``, symmetrised."""
    M = np.asarray(M, dtype=float)
    P = np.asarray(P, dtype=float)
    s = 1.0 / np.sqrt(ellipsoid_diag(S))
    Ms = M * s[..., None, :]
    G = np.swapaxes(Ms, -1, -2) @ P @ Ms
    return 0.5 * (G + np.swapaxes(G, -1, -2))


def d_max_batch(A, B, W, S, P, tol=EIG_TOL) -> BatchTerm:
    """d_max for a batch of ``(A_k, B_k)`` sharing one gain ``W``.

    ``S`` is a single diagonal (vector or matrix) or one diagonal per item.
    """
    M = closed_loop_map(A, B, W)
    if M.ndim == 2:
        M = M[None]
    s_diag = np.broadcast_to(ellipsoid_diag(S), M.shape[:-1])
    G = scaled_gram(M, s_diag, P)
    lam, v, gap = max_eig_sym_batch(G, tol=tol)
    delta = v / np.sqrt(s_diag)
    return BatchTerm(M, np.maximum(lam, 0.0), delta, gap)


def gradient_blocks(M, B, W, P, delta):
    """Envelope gradients ``(grad_A, grad_B, grad_W)`` with the maximiser frozen.

    With ``G = 2 P M y y'`` (``y`` the maximiser in original coordinates):
    ``grad_A = G``, ``grad_B = G W'``, ``grad_W = B' G``.
    """
    PMy = np.einsum("ij,...jk,...k->...i", P, M, delta)
    G = 2.0 * PMy[..., :, None] * delta[..., None, :]
    return G, G @ np.asarray(W).T, np.swapaxes(B, -1, -2) @ G


def d_max_term(A, B, W, S, P, tol=EIG_TOL) -> RobustTerm:
    """Worst-case deviation, maximiser and Danskin gradient for one knot.

    Gradients are left as ``None`` when the top eigenvalue is degenerate.
    """
    A, B, W = (np.asarray(z, dtype=float) for z in (A, B, W))
    P = np.asarray(P, dtype=float)
    t = d_max_batch(A, B, W, S, P, tol=tol)
    d, delta, gap = float(t.d_max[0]), t.delta_max[0], float(t.eigengap[0])
    term = RobustTerm(d, delta, gap, None, None, None)
    if not term.degenerate:
        gA, gB, gW = gradient_blocks(t.M[0], B, W, P, delta)
        term.grad_A, term.grad_B, term.grad_W = gA, gB, gW
    return term


def grad_dmax(A, B, W, S, P, term: RobustTerm | None = None):
    """Gradient of d_max with respect to ``A``, ``B`` and ``W``.

    Raises :class:`DegenerateEigenvalueError` when the maximiser is not unique;
    callers are expected to fall back to finite differences.
    """
    if term is None:
        term = d_max_term(A, B, W, S, P)
    if term.degenerate:
        raise DegenerateEigenvalueError(term.eigengap, float(degeneracy_threshold(term.d_max)))
    M = closed_loop_map(A, B, W)
    return gradient_blocks(M, np.asarray(B, dtype=float), W, np.asarray(P, dtype=float),
                           term.delta_max)


def sample_ellipsoid_boundary(S, count: int, seed: int = 0) -> np.ndarray:
    """``count`` points with ``d' S d = 1``; directions uniform before scaling."""
    if count <= 0:
        raise ValueError("count must be positive")
    s = ellipsoid_diag(S)
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((count, s.size))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return u / np.sqrt(s)

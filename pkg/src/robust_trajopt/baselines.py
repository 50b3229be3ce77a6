"""Time-varying LQR along a nominal trajectory (backward Riccati recursion)."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import NumericFailure


class TvlqrGains(NamedTuple):
    K: np.ndarray   # (T, n_u, n_x); feedback u = -K dx
    P: np.ndarray   # (T+1, n_x, n_x) cost-to-go matrices


def tvlqr(A_seq, B_seq, Q, R, Q_terminal) -> TvlqrGains:
    """Finite-horizon discrete LQR gains for ``dx_{k+1} = A_k dx_k + B_k du_k``.

    ``K_k = (R + B'P B)^-1 B'P A`` and ``P_k = Q + A'P (A - B K_k)`` with
    ``P_{k+1}`` on the right-hand sides and ``P_T = Q_terminal``.
    """
    A_seq = np.asarray(A_seq, dtype=float)
    B_seq = np.asarray(B_seq, dtype=float)
    if A_seq.ndim != 3 or B_seq.ndim != 3 or len(A_seq) != len(B_seq):
        raise ValueError("A_seq and B_seq must be stacks of equal length")
    T, n, _ = A_seq.shape
    m = B_seq.shape[2]
    Q, R, Qf = (np.atleast_2d(np.asarray(z, dtype=float)) for z in (Q, R, Q_terminal))
    P = np.empty((T + 1, n, n))
    K = np.empty((T, m, n))
    P[T] = Qf
    for k in range(T - 1, -1, -1):
        A, B, Pn = A_seq[k], B_seq[k], P[k + 1]
        H = R + B.T @ Pn @ B
        try:
            K[k] = np.linalg.solve(H, B.T @ Pn @ A)
        except np.linalg.LinAlgError:
            raise NumericFailure("singular R + B'PB in Riccati recursion", knot=k) from None
        Pk = Q + A.T @ Pn @ (A - B @ K[k])
        P[k] = 0.5 * (Pk + Pk.T)
        if not np.all(np.isfinite(P[k])):
            raise NumericFailure("non-finite Riccati matrix", knot=k)
    return TvlqrGains(K, P)


def riccati_fixed_point(A, B, Q, R, tol=1e-13, max_iter=100_000) -> TvlqrGains:
    """Stationary gain of the same recursion, iterated until ``P`` stops changing."""
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    Q, R = np.atleast_2d(Q).astype(float), np.atleast_2d(R).astype(float)
    P = Q.copy()
    for _ in range(max_iter):
        K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P_new = Q + A.T @ P @ (A - B @ K)
        P_new = 0.5 * (P_new + P_new.T)
        if np.max(np.abs(P_new - P)) <= tol * max(1.0, np.max(np.abs(P))):
            return TvlqrGains(K[None], P_new[None])
        P = P_new
    raise NumericFailure("Riccati iteration did not converge")

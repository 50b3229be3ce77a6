"""Worst-case one-step deviation on a double integrator, step by step.

Run: python3 demos/metric_walkthrough.py
"""

import numpy as np

from robust_trajopt import closed_loop_map, d_max_term, grad_dmax, sample_ellipsoid_boundary
from robust_trajopt.dynamics import discrete_jacobians, make_double_integrator

model = make_double_integrator()
A, B = discrete_jacobians(model, [0.0, 0.0], [0.0], 0.1)
S = np.array([4.0, 1.0])          # deviations live in d' S d <= 1
P = np.eye(2)

print("A =\n", A, "\nB =\n", B)
for W in (np.zeros((1, 2)), np.array([[-2.0, -3.0]])):
    t = d_max_term(A, B, W, S, P)
    M = closed_loop_map(A, B, W)
    pts = sample_ellipsoid_boundary(S, 20_000, seed=0)
    sampled = np.max(np.sum((pts @ M.T) ** 2, axis=1))
    print(f"\nW = {W.ravel()}")
    print(f"  d_max (eigenvalue)       {t.d_max:.10f}")
    print(f"  max over 20k samples     {sampled:.10f}")
    print(f"  worst deviation          {t.delta_max}  (d'Sd = {t.delta_max @ (S * t.delta_max):.12f})")
    print(f"  eigengap                 {t.eigengap:.3g}")

# envelope gradient against central differences
W = np.array([[-2.0, -3.0]])
_, _, gW = grad_dmax(A, B, W, S, P)
h = 1e-6
fd = [(d_max_term(A, B, W + h * e, S, P).d_max - d_max_term(A, B, W - h * e, S, P).d_max) / (2 * h)
      for e in np.eye(2).reshape(2, 1, 2)]
print(f"\ngrad_W analytic {gW.ravel()}\ngrad_W central  {np.array(fd)}")

# a tied top eigenvalue has no unique maximiser, so no gradient is returned
tied = d_max_term(np.eye(2), np.zeros((2, 1)), np.zeros((1, 2)), np.ones(2), P)
print(f"\nM = I: d_max {tied.d_max:.3f}, eigengap {tied.eigengap:.1e}, degenerate {tied.degenerate}")

"""Closed-form cylinder solution and its saddle at the centre.

A cylinder held at 1 on its end disks and 2 on its lateral surface has a
solution that is a Bessel-cosine series.  Its Hessian at the centre is
``diag(-2 lam, lam, lam)``: a non-degenerate saddle.  This script prints
``lam`` for a few heights, checks it against an axisymmetric finite
difference solve, and samples the reflected gradient on a small sphere.

Run with ``python3 demos/01_cylinder_saddle.py``.
"""

from __future__ import annotations

import numpy as np

from critforge.cylinder_series import CylinderSpec, coefficients, gradient_on_cylinder_sphere, hessian_at_origin, lambda_sweep
from critforge.experiments import axisym_lambda

# %% curvature versus height
for row in lambda_sweep([1, 2, 4, 8], a=1.0):
    print(f"H={row.H:4g}  lambda={row.lam:.6e}  trace residual={row.trace_residual:.1e}")

# %% finite-difference cross-check (coarser than the acceptance run to stay quick)
series = coefficients(CylinderSpec(H=4.0, a=1.0))
rep = hessian_at_origin(series)
fd = axisym_lambda(4.0, 1.0, points=257)
print(f"\nH=4: series lambda {rep.lam:.6f}, finite differences {fd:.6f}")

# %% the reflected gradient points outward on a small sphere
sg = gradient_on_cylinder_sphere(series, ball_radius=0.5, n_samples=2000)
print(f"min over sphere of nu . (R grad u) = {sg.minimum:.4f}  (positive: outward)")
print("Hessian diagonal:", np.round(rep.hessian_diag, 6))

"""How the solution approaches its high-contrast limit.

Builds the reference layout (a cylinder wired to two conducting handles),
computes the first terms of the expansion in the contrast ``eta`` and
compares partial sums with direct solves.  The limit error should fall
like ``eta`` and the first-order corrected error like ``eta**2``.

Run with ``python3 demos/02_contrast_expansion.py [grid]`` (default 32).
"""

from __future__ import annotations

import sys

import numpy as np

from critforge.cascade import dirichlet_expansion
from critforge.experiments import fit_slope
from critforge.geometry import BoundaryData, build_masks, conductivity, reference_domain
from critforge.solver import BoundaryCondition, solve

n = int(sys.argv[1]) if len(sys.argv) > 1 else 32
spec = reference_domain()
masks = build_masks(spec, spec.grid(n))
for note in masks.report:
    print("layout note:", note)

# 1 on the patch of handle 1, 2 on the patch of handle 2, 1.5 elsewhere
g = BoundaryData("1.5", {"D1": 1.0, "D2": 2.0}).face_values(masks)
expansion = dirichlet_expansion(masks, g, N=2)
print("term growth ratios:", np.round(expansion.growth_ratios(), 2))

core = masks.core()
bc = BoundaryCondition.dirichlet_data(masks.grid, g)
etas = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3]
e0, e1 = [], []
for eta in etas:
    u = solve(masks.grid, conductivity(masks, eta), bc).field.values
    e0.append(np.abs(u - expansion.evaluate(eta, 0))[core].max())
    e1.append(np.abs(u - expansion.evaluate(eta, 1))[core].max())
    print(f"eta={eta:7.0e}  |u - u0| = {e0[-1]:.3e}  |u - u0 - eta u1| = {e1[-1]:.3e}")

print(f"\nslope of limit error: {fit_slope(etas, e0)['slope']:.3f}")
print(f"slope of corrected error (top three eta): {fit_slope(etas[:3], e1[:3])['slope']:.3f}")

"""Finite-volume solution of ``div(sigma grad u) = 0`` on structured grids.

Unknowns sit at cell centres.  The face conductance between two cells is the
harmonic mean of their conductivities, which makes the scheme exact for
layered media at any contrast.  A Dirichlet face contributes a half-cell
conductance ``2 sigma h`` towards the prescribed face value; a Neumann face
contributes its prescribed outward flux density ``sigma du/dnu`` times the
face area.  The resulting symmetric positive definite system is solved
matrix-free by Jacobi-preconditioned conjugate gradients.

All reductions go through ``np.sum`` (pairwise, fixed order), so repeated
solves are bit-identical.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage

from .errors import ConvergenceError, DomainError, IncompatibleDataError, PreconditionError
from .grid import AxisymGrid, Faces, Grid3, ScalarField, _neighbours, pad_along

__all__ = [
    "BoundaryCondition",
    "SolveReport",
    "AxisymBC",
    "solve",
    "solve_mixed",
    "solve_axisym",
    "flux_integral",
    "face_trace",
    "pcg",
    "axisym_origin_hessian",
]

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
COMPAT_RTOL = 1e-8
_FACE6 = ndimage.generate_binary_structure(3, 1)


def _dot(a, b):
    return float(np.sum(a * b))


def pcg(apply: Callable, b: np.ndarray, inv_diag: np.ndarray, tol: float, maxiter: int, x0=None):
    """Jacobi-preconditioned conjugate gradients.

    Stops when ``sqrt(r.Mr) / sqrt(b.Mb) <= tol`` (relative preconditioned
    residual), confirmed on the recomputed true residual.

    Returns
    -------
    x, iterations, final relative residual
    """
    x = np.zeros_like(b) if x0 is None else x0.copy()
    bnorm = math.sqrt(_dot(b, inv_diag * b))
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    r = b - apply(x)
    z = inv_diag * r
    rz = _dot(r, z)
    res = math.sqrt(max(rz, 0.0)) / bnorm
    if res <= tol:
        return x, 0, res
    p = z.copy()
    for it in range(1, maxiter + 1):
        q = apply(p)
        pq = _dot(p, q)
        if pq <= 0.0:
            raise ConvergenceError(f"operator not positive definite (p.Ap = {pq:.3e})", stage=it)
        alpha = rz / pq
        x += alpha * p
        if it % 200 == 0:
            r = b - apply(x)
        else:
            r -= alpha * q
        z = inv_diag * r
        rz_new = _dot(r, z)
        res = math.sqrt(max(rz_new, 0.0)) / bnorm
        if res <= tol:
            r = b - apply(x)
            z = inv_diag * r
            rz_new = _dot(r, z)
            res = math.sqrt(max(rz_new, 0.0)) / bnorm
            if res <= tol:
                return x, it, res
            p = z.copy()
            rz = rz_new
            continue
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(f"PCG did not reach tol={tol:g} in {maxiter} iterations (residual {res:.3e})")


def _default_maxiter(n_free, contrast):
    return int(50 * max(n_free, 1) ** (1.0 / 3.0) * math.sqrt(max(contrast, 1.0))) + 100


@dataclass
class BoundaryCondition:
    """Data on the box boundary faces.

    ``values`` holds the Dirichlet value where ``dirichlet`` is set and the
    outward flux density ``sigma du/dnu`` elsewhere.  Pure-Neumann problems
    pin one cell through ``anchor = ((i, j, k), value)``.
    """

    dirichlet: Faces
    values: Faces
    anchor: tuple | None = None

    @classmethod
    def dirichlet_data(cls, grid: Grid3, g) -> "BoundaryCondition":
        bnd = Faces.boundary(grid)
        vals = g if isinstance(g, Faces) else Faces.from_function(grid, g, bnd)
        return cls(bnd, vals, None)

    @classmethod
    def neumann_data(cls, grid: Grid3, flux, anchor) -> "BoundaryCondition":
        bnd = Faces.boundary(grid)
        vals = flux if isinstance(flux, Faces) else Faces.from_function(grid, flux, bnd)
        return cls(Faces.zeros(grid, bool), vals, anchor)


class _System:
    """Assembled matrix-free operator for one region of a grid."""

    def __init__(self, grid, sigma, active, dmask, data, fixed=None, fixed_values=None):
        self.grid = grid
        h = grid.h
        self.sigma = sigma
        self.active = active
        self.fixed = np.zeros_like(active) if fixed is None else fixed & active
        self.free = active & ~self.fixed
        self.boundary = Faces.of_cells(active)
        self.dmask = dmask & self.boundary
        self.nmask = self.boundary & ~self.dmask
        self.data = data
        self.c_inner = []
        self.cD = []
        diag = np.zeros(grid.dims)
        rhs = np.zeros(grid.dims)
        has_dir = np.zeros(grid.dims, dtype=bool)
        for d in range(3):
            lo_act, hi_act = _neighbours(active, d)
            s_lo, s_hi = pad_along(sigma, d, 1.0)
            interior = lo_act & hi_act
            with np.errstate(invalid="ignore", divide="ignore"):
                c_int = np.where(interior, 2.0 * s_lo * s_hi / (s_lo + s_hi) * h, 0.0)
            s_adj = np.where(lo_act, s_lo, s_hi)
            cD = np.where(self.dmask[d], 2.0 * s_adj * h, 0.0)
            src = cD * np.where(self.dmask[d], data[d], 0.0)
            src = src + np.where(self.nmask[d], data[d], 0.0) * h * h
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[d] = slice(None, -1)
            hi[d] = slice(1, None)
            lo, hi = tuple(lo), tuple(hi)
            diag += c_int[lo] + c_int[hi] + cD[lo] + cD[hi]
            rhs += src[lo] + src[hi]
            has_dir |= (cD[lo] > 0) | (cD[hi] > 0)
            inner = [slice(None)] * 3
            inner[d] = slice(1, -1)
            self.c_inner.append(c_int[tuple(inner)])
            self.cD.append(cD)
        self.diag = np.where(active, diag, 0.0)
        self.has_dirichlet = has_dir & active
        self.fixed_values = np.zeros(grid.dims)
        if fixed_values is not None:
            self.fixed_values[self.fixed] = np.asarray(fixed_values)[self.fixed]
        self.free_f = self.free.astype(float)
        b = np.where(active, rhs, 0.0)
        if self.fixed.any():
            b = b - self._apply_full(self.fixed_values)
        self.rhs = b * self.free_f
        self.source = np.where(active, rhs, 0.0)

    def _apply_full(self, u):
        y = self.diag * u
        for d, c in enumerate(self.c_inner):
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[d] = slice(None, -1)
            hi[d] = slice(1, None)
            lo, hi = tuple(lo), tuple(hi)
            y[lo] -= c * u[hi]
            y[hi] -= c * u[lo]
        return y

    def apply(self, u):
        return self._apply_full(u) * self.free_f

    def check_components(self):
        labels, n = ndimage.label(self.active, structure=_FACE6)
        if n == 0:
            raise PreconditionError("solve region is empty")
        anchored = ndimage.maximum(
            (self.has_dirichlet | self.fixed).astype(int), labels, index=np.arange(1, n + 1)
        )
        floating = [i + 1 for i, ok in enumerate(np.atleast_1d(anchored)) if not ok]
        if floating:
            raise PreconditionError(
                f"{len(floating)} region component(s) carry neither Dirichlet data nor an anchor"
            )
        return labels, n

    def check_compatibility(self, labels, n, rtol):
        h2 = self.grid.h ** 2
        for comp in range(1, n + 1):
            cells = labels == comp
            if self.has_dirichlet[cells].any():
                continue
            net = 0.0
            scale = 0.0
            for d in range(3):
                lo_c, hi_c = _neighbours(cells, d)
                sel = self.nmask[d] & (lo_c | hi_c)
                q = self.data[d][sel]
                net += float(np.sum(q)) * h2
                scale += float(np.sum(np.abs(q))) * h2
            if abs(net) > rtol * scale + 1e-14:
                raise IncompatibleDataError(
                    f"net Neumann flux {net:.3e} on a pure-Neumann component (scale {scale:.3e})"
                )

    def solve(self, tol, maxiter=None, x0=None, compat_rtol=COMPAT_RTOL):
        labels, n = self.check_components()
        self.check_compatibility(labels, n, compat_rtol)
        inv_diag = np.where(self.free, 1.0 / np.where(self.diag > 0, self.diag, 1.0), 0.0)
        if maxiter is None:
            s = self.sigma[self.active]
            maxiter = _default_maxiter(int(self.free.sum()), float(s.max() / s.min()))
        guess = None if x0 is None else np.where(self.free, x0, 0.0)
        x, its, res = pcg(self.apply, self.rhs, inv_diag, tol, maxiter, guess)
        u = np.where(self.free, x, self.fixed_values)
        u = np.where(self.active, u, np.nan)
        log.debug("solve: %d free cells, %d iterations, residual %.2e", int(self.free.sum()), its, res)
        return u, its, res


@dataclass
class SolveReport:
    iterations: int
    final_residual: float
    field: ScalarField
    system: object = field(default=None, repr=False)


def _sigma_array(grid, sigma):
    arr = np.asarray(getattr(sigma, "values", sigma), dtype=float)
    if arr.ndim == 0:
        arr = np.full(grid.dims, float(arr))
    if arr.shape != grid.dims:
        raise DomainError(f"conductivity shape {arr.shape} does not match grid {grid.dims}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.5:
        raise DomainError("conductivity must be finite and >= 1/2")
    return arr


def solve(grid: Grid3, sigma, bc: BoundaryCondition, tol: float = DEFAULT_TOL, maxiter=None, x0=None) -> SolveReport:
    """Solve on the whole box with boundary data ``bc``.

    Raises
    ------
    ConvergenceError
        PCG hit its iteration cap.
    IncompatibleDataError
        Pure-Neumann data with non-zero net flux.
    PreconditionError
        Pure-Neumann data without an anchor.
    """
    sig = _sigma_array(grid, sigma)
    active = np.ones(grid.dims, dtype=bool)
    fixed = fixed_values = None
    if bc.anchor is not None:
        idx, val = bc.anchor
        fixed = np.zeros(grid.dims, dtype=bool)
        fixed[tuple(idx)] = True
        fixed_values = np.zeros(grid.dims)
        fixed_values[tuple(idx)] = val
    system = _System(grid, sig, active, bc.dirichlet, bc.values, fixed, fixed_values)
    u, its, res = system.solve(tol, maxiter, x0)
    return SolveReport(its, res, ScalarField(grid, u), system)


def solve_mixed(
    grid: Grid3,
    region: np.ndarray,
    dirichlet_faces: tuple[Faces, Faces],
    neumann_faces: tuple[Faces, Faces] | None = None,
    tol: float = DEFAULT_TOL,
    sigma=None,
    anchor=None,
    maxiter=None,
    compat_rtol: float = COMPAT_RTOL,
) -> SolveReport:
    """Laplace (or ``sigma``-weighted) solve restricted to the cells of ``region``.

    ``dirichlet_faces`` and ``neumann_faces`` are ``(mask, values)`` pairs on
    faces of the region boundary; Neumann values are outward flux densities.
    Region-boundary faces in neither set get zero flux.  Components of the
    region without Dirichlet faces need ``anchor = ((i, j, k), value)``.
    """
    region = np.asarray(region, dtype=bool)
    sig = np.ones(grid.dims) if sigma is None else _sigma_array(grid, sigma)
    dmask, dvals = dirichlet_faces
    if neumann_faces is not None:
        nmask, nvals = neumann_faces
        if (dmask & nmask).any():
            raise PreconditionError("a face carries both Dirichlet and Neumann data")
    else:
        nmask, nvals = Faces.zeros(grid, bool), Faces.zeros(grid)
    bnd = Faces.of_cells(region)
    if (dmask & ~bnd).any() or (nmask & ~bnd).any():
        raise PreconditionError("boundary data given on faces that do not bound the region")
    data = dvals.where(dmask, nvals.where(nmask, Faces.zeros(grid)))
    fixed = fixed_values = None
    if anchor is not None:
        anchors = anchor if isinstance(anchor, list) else [anchor]
        fixed = np.zeros(grid.dims, dtype=bool)
        fixed_values = np.zeros(grid.dims)
        for idx, val in anchors:
            fixed[tuple(idx)] = True
            fixed_values[tuple(idx)] = val
    system = _System(grid, sig, region, dmask, data, fixed, fixed_values)
    u, its, res = system.solve(tol, maxiter, compat_rtol=compat_rtol)
    return SolveReport(its, res, ScalarField(grid, u), system)


def _boundary_flux(system, u, d):
    """Outward flux density on region-boundary faces along ``d`` (0 elsewhere)."""
    h = system.grid.h
    lo_act, _ = _neighbours(system.active, d)
    u0 = np.where(system.active, u, 0.0)
    u_lo, u_hi = pad_along(u0, d, 0.0)
    s_lo, s_hi = pad_along(system.sigma, d, 1.0)
    u_adj = np.where(lo_act, u_lo, u_hi)
    s_adj = np.where(lo_act, s_lo, s_hi)
    dirichlet = s_adj * (system.data[d] - u_adj) / (0.5 * h)
    out = np.where(system.dmask[d], dirichlet, 0.0)
    return np.where(system.nmask[d], system.data[d], out)


def face_trace(report: SolveReport) -> Faces:
    """Solution values on the region-boundary faces (NaN on other faces).

    Dirichlet faces return their data; Neumann faces the cell value shifted
    by half a cell along the prescribed normal derivative.
    """
    system = report.system
    u = report.field.values
    h = system.grid.h
    out = []
    for d in range(3):
        lo_act, _ = _neighbours(system.active, d)
        u0 = np.where(system.active, u, 0.0)
        u_lo, u_hi = pad_along(u0, d, 0.0)
        s_lo, s_hi = pad_along(system.sigma, d, 1.0)
        u_adj = np.where(lo_act, u_lo, u_hi)
        s_adj = np.where(lo_act, s_lo, s_hi)
        val = np.where(system.dmask[d], system.data[d], u_adj + 0.5 * h * system.data[d] / s_adj)
        out.append(np.where(system.boundary[d], val, np.nan))
    return Faces(out)


def flux_density(report: SolveReport, surface: Faces, side: np.ndarray | None = None) -> Faces:
    """``sigma du/dnu`` on each face of ``surface`` with ``nu`` pointing away from ``side``.

    ``side`` defaults to the solved region (outward normal).  Faces between two
    solved cells need an explicit ``side``.
    """
    system = report.system
    u = report.field.values
    h = system.grid.h
    side_mask = system.active if side is None else np.asarray(side, dtype=bool)
    out = []
    for d in range(3):
        sel = surface[d]
        lo_act, hi_act = _neighbours(system.active, d)
        lo_side, hi_side = _neighbours(side_mask, d)
        if np.any(sel & ~(lo_act | hi_act)):
            raise PreconditionError("surface faces not adjacent to the solved region")
        if np.any(sel & ~(lo_side ^ hi_side)):
            raise PreconditionError("each surface face needs exactly one adjacent 'side' cell")
        direction = np.where(lo_side, 1.0, -1.0)
        interior = lo_act & hi_act
        u0 = np.where(system.active, u, 0.0)
        u_lo, u_hi = pad_along(u0, d, 0.0)
        full = np.zeros(system.grid.face_shape(d))
        inner = [slice(None)] * 3
        inner[d] = slice(1, -1)
        full[tuple(inner)] = system.c_inner[d]
        plus_dir = np.where(interior, full / h * (u_hi - u_lo) / h, 0.0)
        bflux = _boundary_flux(system, u, d)
        plus_dir = np.where(system.boundary[d] & lo_act, bflux, plus_dir)
        plus_dir = np.where(system.boundary[d] & hi_act, -bflux, plus_dir)
        out.append(np.where(sel, direction * plus_dir, 0.0))
    return Faces(out)


def flux_integral(report: SolveReport, surface: Faces, side: np.ndarray | None = None) -> float:
    """Discrete ``integral of sigma du/dnu`` over ``surface``.

    ``nu`` points away from the cells in ``side`` (default: out of the solved
    region).  For an interface ``N`` of a handle ``X^i`` solved from the
    exterior region, pass ``side=handle_mask`` so that ``nu`` points into the
    exterior region.
    """
    dens = flux_density(report, surface, side)
    h2 = report.system.grid.h ** 2
    return float(sum(np.sum(a) for a in dens)) * h2


# --- axisymmetric solver ---------------------------------------------------


@dataclass
class AxisymBC:
    """Dirichlet data on the outer radius and the two end lines of an ``(r, z)`` grid."""

    outer: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def from_function(cls, grid: AxisymGrid, g) -> "AxisymBC":
        r, z = grid.r(), grid.z()
        return cls(
            np.broadcast_to(np.asarray(g(np.full_like(z, grid.r_max), z), float), z.shape).copy(),
            np.broadcast_to(np.asarray(g(r, np.full_like(r, grid.z_min)), float), r.shape).copy(),
            np.broadcast_to(np.asarray(g(r, np.full_like(r, grid.z_max)), float), r.shape).copy(),
        )


def solve_axisym(grid2: AxisymGrid, bc: AxisymBC, tol: float = DEFAULT_TOL, maxiter=None) -> SolveReport:
    """Solve ``r^-1 d_r(r d_r u) + d_zz u = 0`` with symmetry on the axis.

    Finite volumes around each node: radial faces weighted by their radius,
    axial faces by the ring area ``r_j dr`` (``dr^2/8`` on the axis).
    """
    nz, nr = grid2.nz, grid2.nr
    dr, dz = grid2.dr, grid2.dz
    r = grid2.r()
    u_fix = np.zeros((nz, nr))
    u_fix[:, -1] = bc.outer
    u_fix[0, :] = bc.lower
    u_fix[-1, :] = bc.upper
    free = np.zeros((nz, nr), dtype=bool)
    free[1:-1, :-1] = True
    r_face = 0.5 * (r[:-1] + r[1:])
    c_r = np.broadcast_to(r_face * dz / dr, (nz, nr - 1)).copy()
    ring = np.where(np.arange(nr) == 0, dr * dr / 8.0, r * dr)
    c_z = np.broadcast_to(ring / dz, (nz - 1, nr)).copy()
    diag = np.zeros((nz, nr))
    diag[:, :-1] += c_r
    diag[:, 1:] += c_r
    diag[:-1, :] += c_z
    diag[1:, :] += c_z
    free_f = free.astype(float)

    def apply_full(u):
        y = diag * u
        y[:, :-1] -= c_r * u[:, 1:]
        y[:, 1:] -= c_r * u[:, :-1]
        y[:-1, :] -= c_z * u[1:, :]
        y[1:, :] -= c_z * u[:-1, :]
        return y

    def apply(u):
        return apply_full(u) * free_f

    b = -apply_full(np.where(free, 0.0, u_fix)) * free_f
    inv_diag = np.where(free, 1.0 / diag, 0.0)
    if maxiter is None:
        maxiter = _default_maxiter(int(free.sum()), 1.0) * 4
    x, its, res = pcg(apply, b, inv_diag, tol, maxiter)
    u = np.where(free, x, u_fix)
    return SolveReport(its, res, ScalarField(grid2, u), None)


def axisym_origin_hessian(report: SolveReport, steps: int = 8) -> tuple[float, float]:
    """``(d2u/dr2, d2u/dz2)`` at ``r = 0`` on the middle z-line.

    Second differences over ``steps`` and ``2 steps`` nodes combined by
    Richardson extrapolation; the middle row must sit at ``z = 0``.
    """
    g = report.field.grid
    u = report.field.values
    if g.nz % 2 == 0:
        raise DomainError("axisymmetric grid needs an odd number of z nodes")
    mid = g.nz // 2

    def d2r(m):
        rr = m * g.dr
        return 2.0 * (u[mid, m] - u[mid, 0]) / rr**2

    def d2z(m):
        zz = m * g.dz
        return (u[mid + m, 0] - 2.0 * u[mid, 0] + u[mid - m, 0]) / zz**2

    m = steps
    return (4.0 * d2r(m) - d2r(2 * m)) / 3.0, (4.0 * d2z(m) - d2z(2 * m)) / 3.0

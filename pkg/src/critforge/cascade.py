"""Power-series expansion of high-contrast solutions in the contrast ``eta``.

With conductivity ``1/eta`` on the handles and 1 elsewhere, the solution
expands as ``u_eta = sum_n eta^n u_n``.  Each order is obtained from a
sequence of solves with unit conductivity:

* on every handle, a mixed problem whose interface flux is the exterior
  flux of the previous order;
* on the exterior region (PLUS), a problem whose interface values are the
  handle traces of the current order.

On the cell-centred grid the recursion reproduces the Taylor expansion of
the discrete high-contrast system exactly.  The conductance between a PLUS
cell and a handle cell is two half cells in series, so the shared face value
at order ``n`` equals the handle-side trace at order ``n``.

Sign convention: interface normal derivatives point out of the handle into
PLUS.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConvergenceError, GeometryError, IncompatibleDataError, PreconditionError
from .geometry import HANDLE1, HANDLE2, PLUS, RegionMasks
from .grid import Faces
from .solver import DEFAULT_TOL, face_trace, flux_density, solve_mixed

__all__ = [
    "CascadeResult",
    "dirichlet_limit",
    "dirichlet_expansion",
    "neumann_limit",
    "neumann_expansion",
]

DEFAULT_ORDER = 2
COMPAT_TOL = 1e-6
_REGION_NAMES = {PLUS: "plus", HANDLE1: "handle1", HANDLE2: "handle2"}


@dataclass
class CascadeResult:
    """Expansion terms ``u_0 .. u_N`` stored as full-grid arrays.

    Regions are disjoint, so each term carries its handle and exterior parts
    in one array.  ``constants`` holds ``beta1``, ``beta2``, ``alpha`` and the
    list ``a`` for the Neumann branch.
    """

    branch: str
    masks: RegionMasks = field(repr=False)
    terms: list = field(repr=False)
    constants: dict = field(default_factory=dict)
    iterations: list = field(default_factory=list)

    @property
    def order_N(self) -> int:
        return len(self.terms) - 1

    def evaluate(self, eta: float, order: int | None = None) -> np.ndarray:
        """Partial sum ``sum_{n <= order} eta^n u_n``."""
        order = self.order_N if order is None else order
        if order > self.order_N:
            raise PreconditionError(f"order {order} exceeds computed order {self.order_N}")
        out = np.zeros_like(self.terms[0])
        for n in range(order, -1, -1):
            out = out * eta + self.terms[n]
        return out

    def norm_rows(self) -> list[tuple]:
        h3 = self.masks.grid.h ** 3
        rows = []
        for n, term in enumerate(self.terms):
            for role in (HANDLE1, HANDLE2, PLUS):
                vals = term[self.masks.labels == role]
                if vals.size == 0:
                    continue
                rows.append((n, _REGION_NAMES[role], math.sqrt(h3 * float(np.sum(vals * vals))),
                             float(np.max(np.abs(vals)))))
        return rows

    def growth_ratios(self) -> list[float]:
        """``||u_{n+1}||_max / ||u_n||_max`` over all cells; an empirical expansion radius gauge."""
        norms = [float(np.max(np.abs(t))) for t in self.terms]
        return [b / a if a > 0 else math.inf for a, b in zip(norms[:-1], norms[1:])]

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(["n", "region", "norm_L2", "norm_max"])
            for n, region, l2, mx in self.norm_rows():
                w.writerow([n, region, repr(l2), repr(mx)])
        return path

    def summary(self) -> dict:
        out = {"branch": self.branch, "order_N": self.order_N, "growth_ratios": self.growth_ratios()}
        out.update(self.constants)
        return out

    def write_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _handle_ids(masks):
    return list(range(1, len(masks.roles) + 1))


def _stage(fn, stage, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConvergenceError as exc:
        raise ConvergenceError(str(exc), stage=stage) from exc


def dirichlet_expansion(masks: RegionMasks, g: Faces, N: int = DEFAULT_ORDER, tol: float = DEFAULT_TOL) -> CascadeResult:
    """Terms ``u_0 .. u_N`` for Dirichlet data ``g`` on the box boundary.

    Order 0 solves each handle with ``g`` on its patch and zero interface
    flux, then PLUS with ``g`` on the remaining boundary and the handle
    values on the interfaces.  Order ``n >= 1`` feeds the PLUS interface flux
    of order ``n-1`` into the handles (zero on the patches) and their traces
    back into PLUS (zero on the outer boundary).

    Raises
    ------
    ConvergenceError
        With ``stage`` set to the failing order.
    """
    if N < 0:
        raise PreconditionError("expansion order must be >= 0")
    grid = masks.grid
    plus = masks.plus
    gamma = masks.gamma
    hids = _handle_ids(masks)
    zeros = Faces.zeros(grid)
    terms, its = [], []
    plus_rep = None
    for n in range(N + 1):
        u = np.full(grid.dims, np.nan)
        u[plus] = 0.0
        trace_mask = Faces.zeros(grid, bool)
        traces = Faces.zeros(grid)
        count = 0
        for hid in hids:
            region = masks.handle_by_id(hid)
            patch = masks.patch_of_handle(hid)
            iface = masks.interface_of_handle(hid)
            if n == 0:
                rep = _stage(solve_mixed, n, grid, region, (patch, g), None, tol)
            else:
                flux = flux_density(plus_rep, iface, side=region)
                rep = _stage(solve_mixed, n, grid, region, (patch, zeros), (iface, flux), tol)
            count += rep.iterations
            u[region] = rep.field.values[region]
            traces = face_trace(rep).where(iface, traces)
            trace_mask = trace_mask | iface
        dvals = g.where(gamma, zeros) if n == 0 else zeros
        dvals = traces.where(trace_mask, dvals)
        plus_rep = _stage(solve_mixed, n, grid, plus, (trace_mask | gamma, dvals), None, tol)
        count += plus_rep.iterations
        u[plus] = plus_rep.field.values[plus]
        terms.append(u)
        its.append(count)
    return CascadeResult("dirichlet", masks, terms, {}, its)


def dirichlet_limit(masks: RegionMasks, g: Faces, tol: float = DEFAULT_TOL) -> CascadeResult:
    return dirichlet_expansion(masks, g, 0, tol)


class _Combo:
    """Exterior field ``w + a (1 - v)`` with flux queries by linearity."""

    def __init__(self, w_rep, v_rep, a):
        self.w, self.v, self.a = w_rep, v_rep, a

    def flux(self, faces, side):
        fw = flux_density(self.w, faces, side)
        fv = flux_density(self.v, faces, side)
        return Faces(x - self.a * y for x, y in zip(fw, fv))

    def values(self, plus):
        return np.where(plus, self.w.field.values + self.a * (1.0 - self.v.field.values), np.nan)


def _single_handle(masks, role):
    ids = [hid for hid, r in zip(_handle_ids(masks), masks.roles) if r == role]
    if len(ids) != 1:
        raise PreconditionError(f"flux branch needs exactly one handle of role {role}, found {len(ids)}")
    return ids[0]


def neumann_expansion(
    masks: RegionMasks,
    g: Faces,
    N: int = DEFAULT_ORDER,
    tol: float = DEFAULT_TOL,
    compat_tol: float = COMPAT_TOL,
) -> CascadeResult:
    """Terms for outward flux data ``g`` on the box boundary.

    Normalization: ``u_eta`` vanishes at the anchor cell of handle 1, so
    ``beta1 = 0``.  At each order the constant ``a_n`` added on handle 2 is
    fixed by the compatibility condition of the next handle-1 problem, via
    the discrete Green identity with the auxiliary field ``v`` (1 on the
    handle-1 interface, 0 on the handle-2 interface, no flux through the
    outer boundary).

    Raises
    ------
    PreconditionError
        A handle is not face-connected.
    IncompatibleDataError
        ``g`` has non-zero total flux.
    GeometryError
        The flux of ``v`` through the handle-2 interface is numerically zero.
    ConvergenceError
        A compatibility residual exceeds ``compat_tol``; ``stage`` is the order.
    """
    if N < 0:
        raise PreconditionError("expansion order must be >= 0")
    grid = masks.grid
    h2 = grid.h ** 2
    bnd = Faces.boundary(grid)
    total = g.sum(bnd) * h2
    scale = float(sum(np.sum(np.abs(a[m])) for a, m in zip(g, bnd))) * h2
    if abs(total) > 1e-8 * max(scale, 1e-300):
        raise IncompatibleDataError(f"boundary flux has net value {total:.3e}")
    plus = masks.plus
    gamma = masks.gamma
    zeros = Faces.zeros(grid)
    h1, h2id = _single_handle(masks, HANDLE1), _single_handle(masks, HANDLE2)
    reg1, reg2 = masks.handle_by_id(h1), masks.handle_by_id(h2id)
    for role, reg in ((HANDLE1, reg1), (HANDLE2, reg2)):
        # one free constant per handle: a floating piece would need its own
        if ndimage.label(reg, structure=ndimage.generate_binary_structure(3, 1))[1] != 1:
            raise PreconditionError(f"handle of role {role} is not face-connected; flux data need connected handles")
    n1, n2 = masks.interface_of_handle(h1), masks.interface_of_handle(h2id)
    p1, p2 = masks.patch_of_handle(h1), masks.patch_of_handle(h2id)
    anchor1, anchor2 = masks.anchor_cell(h1), masks.anchor_cell(h2id)
    iface = n1 | n2

    ones_on_n1 = Faces(np.where(m, 1.0, 0.0) for m in n1)
    v_rep = _stage(solve_mixed, "v", grid, plus, (iface, ones_on_n1), None, tol)
    alpha = flux_integral_faces(v_rep, n2, reg2, h2)
    if not abs(alpha) > 1e-10 * n2.count() * h2:
        raise GeometryError(f"interface flux of the auxiliary field is degenerate (alpha = {alpha:.3e})")
    v_face = face_trace(v_rep)
    flux_d1 = g.sum(p1) * h2

    terms, its, a_list, residuals = [], [], [], []
    prev = None
    for n in range(N + 1):
        u = np.full(grid.dims, np.nan)
        tr = zeros
        count = 0
        if n == 0:
            u[reg1] = 0.0
            u2 = np.zeros(grid.dims)
        else:
            reps = []
            for hid, reg, iface_i, patch, anchor in ((h1, reg1, n1, p1, anchor1), (h2id, reg2, n2, p2, anchor2)):
                data = prev.flux(iface_i, reg)
                mask = iface_i
                if n == 1:
                    data = g.where(patch, data)
                    mask = mask | patch
                rep = _stage(solve_mixed, n, grid, reg, (Faces.zeros(grid, bool), zeros), (mask, data), tol,
                             anchor=(anchor, 0.0), compat_rtol=compat_tol)
                count += rep.iterations
                reps.append(rep)
            u[reg1] = reps[0].field.values[reg1]
            u2 = reps[1].field.values
            tr = face_trace(reps[0]).where(n1, face_trace(reps[1]).where(n2, zeros))
        outer_flux = g.where(gamma, zeros) if n == 0 else zeros
        w_rep = _stage(solve_mixed, n, grid, plus, (iface, tr.where(iface, zeros)), (gamma, outer_flux), tol)
        count += w_rep.iterations
        # Green identity: the handle-1 interface flux of w (into PLUS) from face values
        fv_out = flux_density(v_rep, iface, None)
        w_face = face_trace(w_rep)
        green = sum(float(np.sum(np.where(m, vf * q, 0.0))) for vf, q, m in zip(v_face, outer_flux, gamma)) * h2
        green -= sum(float(np.sum(np.where(m, wf * q, 0.0))) for wf, q, m in zip(w_face, fv_out, iface)) * h2
        source = flux_d1 if n == 0 else 0.0
        a_n = -(source + green) / alpha
        combo = _Combo(w_rep, v_rep, a_n)
        direct = combo.flux(n1, reg1).sum(n1) * h2
        residual = abs(source + direct)
        ref = abs(source) + abs(green) + abs(a_n * alpha) + 1e-300
        residuals.append(residual / ref)
        if residual > compat_tol * ref:
            raise ConvergenceError(f"compatibility residual {residual:.3e} at order {n}", stage=n)
        u[reg2] = u2[reg2] + a_n
        u[plus] = combo.values(plus)[plus]
        terms.append(u)
        its.append(count)
        a_list.append(a_n)
        prev = combo
    constants = {
        "beta1": 0.0,
        "beta2": a_list[0],
        "alpha": alpha,
        "a": a_list,
        "compat_residuals": residuals,
        "flux_D1": flux_d1,
        "anchor1": list(anchor1),
    }
    result = CascadeResult("neumann", masks, terms, constants, its)
    result.v = v_rep
    return result


def flux_integral_faces(rep, faces, side, h2):
    return float(sum(np.sum(a) for a in flux_density(rep, faces, side))) * h2


def neumann_limit(masks: RegionMasks, g: Faces, tol: float = DEFAULT_TOL) -> CascadeResult:
    return neumann_expansion(masks, g, 0, tol)

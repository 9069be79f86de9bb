"""Scenario geometry: box domain, cylinders, handle tubes and boundary patches.

A :class:`DomainSpec` is a declarative description that :func:`build_masks`
rasterizes onto a :class:`~critforge.grid.Grid3`.  Cells are classified by
their centres, boundary faces by their face centres.

Layout conventions
------------------
Each *unit* is a cylinder together with two handles.  The handle with
``role=1`` attaches to both end disks of its cylinder (``attach="disks"``),
the handle with ``role=2`` to the lateral surface (``attach="lateral"``).
Attachments are shells of the given ``thickness`` wrapped around the
cylinder, so the cylinder cells are enclosed by handle cells.  Tubes are
polylines thickened to ``tube_radius``.  A handle touches the box boundary
only inside its patch ``B(point, radius)``: boundary-layer cells of a handle
with a boundary face outside the patch are returned to the exterior region.
"""

from __future__ import annotations

import ast
import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DomainError, GeometryError
from .grid import Faces, Grid3, _neighbours

__all__ = [
    "PLUS",
    "HANDLE1",
    "HANDLE2",
    "GAMMA",
    "D1",
    "D2",
    "CylinderPlacement",
    "PatchSpec",
    "HandleSpec",
    "UnitSpec",
    "DomainSpec",
    "RegionMasks",
    "ConductivityField",
    "BoundaryData",
    "build_masks",
    "conductivity",
    "mollify",
    "reference_domain",
    "write_masks_csv",
]

PLUS, HANDLE1, HANDLE2 = 0, 1, 2
GAMMA, D1, D2 = 0, 1, 2
NOT_BOUNDARY = -1
_FACE6 = ndimage.generate_binary_structure(3, 1)
_CUBE27 = np.ones((3, 3, 3), dtype=bool)


def _vec(p, n=3):
    v = tuple(float(c) for c in p)
    if len(v) != n or not all(math.isfinite(c) for c in v):
        raise DomainError(f"expected {n} finite coordinates, got {p!r}")
    return v


@dataclass(frozen=True)
class CylinderPlacement:
    """Cylinder of height ``H`` and radius ``a`` along coordinate axis ``axis``."""

    H: float = 4.0
    a: float = 1.0
    center: tuple = (0.0, 0.0, 0.0)
    axis: int = 0

    def __post_init__(self):
        if not (self.H > 0 and self.a > 0):
            raise DomainError("cylinder H and a must be positive")
        if self.axis not in (0, 1, 2):
            raise DomainError("cylinder axis must be 0, 1 or 2")
        object.__setattr__(self, "center", _vec(self.center))

    def local(self, X, Y, Z):
        """Axial offset and distance from the axis for each point."""
        P = (X - self.center[0], Y - self.center[1], Z - self.center[2])
        s = P[self.axis]
        others = [P[d] for d in range(3) if d != self.axis]
        return s, np.hypot(*others)


@dataclass(frozen=True)
class PatchSpec:
    point: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "point", _vec(self.point))
        if not self.radius > 0:
            raise DomainError("patch radius must be positive")


@dataclass(frozen=True)
class HandleSpec:
    role: int
    attach: str
    thickness: float
    tube_radius: float
    polylines: tuple
    patch: PatchSpec
    blocks: tuple = ()
    inset: float = 0.0

    def __post_init__(self):
        if self.role not in (1, 2):
            raise DomainError("handle role must be 1 or 2")
        if self.attach not in ("disks", "lateral", "none"):
            raise DomainError(f"unknown attachment {self.attach!r}")
        if self.thickness < 0 or self.tube_radius <= 0:
            raise DomainError("handle thickness must be >= 0 and tube radius > 0")
        lines = tuple(tuple(_vec(p) for p in line) for line in self.polylines)
        if any(len(line) < 2 for line in lines):
            raise DomainError("each polyline needs at least two points")
        object.__setattr__(self, "polylines", lines)
        blocks = tuple((_vec(lo), _vec(hi)) for lo, hi in self.blocks)
        if any(any(b <= a for a, b in zip(lo, hi)) for lo, hi in blocks):
            raise DomainError("block upper corner must exceed its lower corner")
        object.__setattr__(self, "blocks", blocks)
        if isinstance(self.patch, dict):
            object.__setattr__(self, "patch", PatchSpec(**self.patch))


@dataclass(frozen=True)
class UnitSpec:
    cylinder: CylinderPlacement | None
    handles: tuple = ()


@dataclass(frozen=True)
class DomainSpec:
    """Box ``[lower, upper]`` containing any number of cylinder units."""

    lower: tuple = (-3.0, -3.0, -3.0)
    upper: tuple = (3.0, 3.0, 3.0)
    units: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "lower", _vec(self.lower))
        object.__setattr__(self, "upper", _vec(self.upper))
        if any(u <= l for l, u in zip(self.lower, self.upper)):
            raise DomainError("box upper corner must exceed lower corner")

    def grid(self, n: int) -> Grid3:
        """Grid with ``n`` cells along x and the same spacing on the other axes."""
        h = (self.upper[0] - self.lower[0]) / n
        dims = []
        for l, u in zip(self.lower, self.upper):
            m = (u - l) / h
            if abs(m - round(m)) > 1e-9:
                raise DomainError("box extents must be integer multiples of the x spacing")
            dims.append(int(round(m)))
        return Grid3(self.lower, h, tuple(dims))

    def handles(self) -> list[HandleSpec]:
        return [hs for unit in self.units for hs in unit.handles]

    def to_dict(self) -> dict:
        return {
            "lower": list(self.lower),
            "upper": list(self.upper),
            "units": [
                {
                    "cylinder": None if u.cylinder is None else {
                        "H": u.cylinder.H, "a": u.cylinder.a,
                        "center": list(u.cylinder.center), "axis": u.cylinder.axis,
                    },
                    "handles": [
                        {
                            "role": hs.role, "attach": hs.attach, "thickness": hs.thickness,
                            "tube_radius": hs.tube_radius,
                            "polylines": [[list(p) for p in line] for line in hs.polylines],
                            "blocks": [[list(lo), list(hi)] for lo, hi in hs.blocks],
                            "patch": {"point": list(hs.patch.point), "radius": hs.patch.radius},
                            "inset": hs.inset,
                        }
                        for hs in u.handles
                    ],
                }
                for u in self.units
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        units = []
        for u in d.get("units", []):
            cyl = u.get("cylinder")
            cyl = None if cyl is None else CylinderPlacement(**cyl)
            handles = tuple(
                HandleSpec(
                    role=int(hd["role"]),
                    attach=hd.get("attach", "none"),
                    thickness=float(hd.get("thickness", 0.0)),
                    tube_radius=float(hd.get("tube_radius", 0.3)),
                    polylines=hd.get("polylines", []),
                    blocks=tuple(tuple(b) for b in hd.get("blocks", [])),
                    patch=PatchSpec(**hd["patch"]),
                    inset=float(hd.get("inset", 0.0)),
                )
                for hd in u.get("handles", [])
            )
            units.append(UnitSpec(cyl, handles))
        return cls(tuple(d.get("lower", (-3, -3, -3))), tuple(d.get("upper", (3, 3, 3))), tuple(units))

    @classmethod
    def load_json(cls, path) -> "DomainSpec":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def without_handles(self) -> "DomainSpec":
        return DomainSpec(self.lower, self.upper, tuple(UnitSpec(u.cylinder, ()) for u in self.units))


def reference_domain(
    half_width: float = 3.0,
    H: float = 3.4,
    a: float = 1.1,
    cap_thickness: float = 0.8,
    sleeve_thickness: float = 1.0,
    tower_depth: float = 1.2,
    slab_half_length: float = 0.9,
    slab_half_height: float = 2.0,
    cap_inset: float = 0.5,
    sleeve_inset: float = 0.8,
    slab_axis: int = 2,
    bridge: float = 0.0,
    offset=(0.0, 0.0, 0.0),
) -> DomainSpec:
    """Single-unit layout in the cube ``[-half_width, half_width]^3``.

    The cylinder lies along ``x``.  Handle 1 is a cap on each end disk,
    carried by a full-height tower that meets the box faces ``x = +-L`` and
    ``z = +-L``.  Handle 2 is a sleeve around the lateral surface merged with
    a slab that crosses the box along ``slab_axis`` (``z`` by default, which
    lets several units be stacked along ``y`` through ``offset``).  The layout is symmetric under each
    coordinate reflection through the cylinder centre.

    Caps and sleeve are inset from the corner circles, leaving a gap of
    exterior cells between the two handles there.  Handles are deliberately
    massive and short: the expansion in the contrast converges faster the
    smaller their resistance and the weaker the coupling between them, and
    the gap keeps them apart after mollification.  Each handle's patch is the
    whole of its contact with the box boundary.

    With ``bridge > 0`` a bar of that thickness along the top face joins the
    two towers, making handle 1 connected (needed when handle 1 must carry a
    single constant, as for flux data).  This requires ``slab_axis=1``.
    """
    L = half_width
    ox, oy, oz = offset
    tower_in = H / 2 + cap_thickness

    def b(lo, hi):
        return ((lo[0] + ox, lo[1] + oy, lo[2] + oz), (hi[0] + ox, hi[1] + oy, hi[2] + oz))

    if slab_axis not in (1, 2):
        raise DomainError("the slab of handle 2 crosses the box along y (1) or z (2)")
    slab_lo = [-slab_half_length, -slab_half_height, -slab_half_height]
    slab_hi = [slab_half_length, slab_half_height, slab_half_height]
    shift = offset[slab_axis]
    slab_lo[slab_axis], slab_hi[slab_axis] = -L - shift, L - shift
    towers = (
        b((tower_in, -tower_depth, -L - oz), (L - ox, tower_depth, L - oz)),
        b((-L - ox, -tower_depth, -L - oz), (-tower_in, tower_depth, L - oz)),
    )
    if bridge > 0:
        if slab_axis != 1:
            raise DomainError("a bridge along the top face would cross a slab along z")
        towers += (b((-L - ox, -tower_depth, L - oz - bridge), (L - ox, tower_depth, L - oz)),)
    everywhere = PatchSpec((ox, oy, oz), 4 * L)
    h1 = HandleSpec(
        role=1,
        attach="disks",
        thickness=cap_thickness,
        tube_radius=0.3,
        polylines=(),
        blocks=towers,
        patch=everywhere,
        inset=cap_inset,
    )
    h2 = HandleSpec(
        role=2,
        attach="lateral",
        thickness=sleeve_thickness,
        tube_radius=0.3,
        polylines=(),
        blocks=(b(slab_lo, slab_hi),),
        patch=everywhere,
        inset=sleeve_inset,
    )
    return DomainSpec((-L, -L, -L), (L, L, L), (UnitSpec(CylinderPlacement(H, a, (ox, oy, oz), 0), (h1, h2)),))


def _segment_distance(X, Y, Z, p0, p1):
    p0 = np.asarray(p0)
    d = np.asarray(p1) - p0
    dd = float(d @ d)
    rx, ry, rz = X - p0[0], Y - p0[1], Z - p0[2]
    t = (rx * d[0] + ry * d[1] + rz * d[2]) / dd if dd > 0 else np.zeros_like(X)
    t = np.clip(t, 0.0, 1.0)
    return np.sqrt((rx - t * d[0]) ** 2 + (ry - t * d[1]) ** 2 + (rz - t * d[2]) ** 2)


@dataclass
class RegionMasks:
    """Per-cell region labels and per-face boundary labels.

    ``labels`` holds the handle role (``PLUS``, ``HANDLE1``, ``HANDLE2``);
    ``handle_ids`` numbers the handles ``1..n`` in layout order (0 for PLUS).
    ``boundary`` labels box faces ``GAMMA``, ``D1`` or ``D2`` and is
    ``NOT_BOUNDARY`` elsewhere; ``boundary_ids`` carries the handle id on
    patch faces.
    """

    grid: Grid3
    labels: np.ndarray
    handle_ids: np.ndarray
    roles: tuple
    boundary: Faces
    boundary_ids: Faces
    cylinders: list
    report: list = field(default_factory=list)
    issues: dict = field(default_factory=dict)

    @property
    def plus(self) -> np.ndarray:
        return self.labels == PLUS

    def handle(self, role: int) -> np.ndarray:
        return self.labels == role

    def handle_by_id(self, hid: int) -> np.ndarray:
        return self.handle_ids == hid

    @property
    def cylinder(self) -> np.ndarray:
        out = np.zeros(self.grid.dims, dtype=bool)
        for c in self.cylinders:
            out |= c
        return out

    def dirichlet_patch(self, role: int) -> Faces:
        return Faces(b == role for b in self.boundary)

    def patch_of_handle(self, hid: int) -> Faces:
        return Faces(b == hid for b in self.boundary_ids)

    @property
    def gamma(self) -> Faces:
        return Faces(b == GAMMA for b in self.boundary)

    def interface(self, role: int) -> Faces:
        """Faces between PLUS cells and handle cells of ``role`` (the set N^role)."""
        return Faces.between(self.plus, self.handle(role))

    def interface_of_handle(self, hid: int) -> Faces:
        return Faces.between(self.plus, self.handle_by_id(hid))

    def core(self, min_distance: float | None = None, unit: int | None = None) -> np.ndarray:
        """Cylinder cells whose centres lie more than ``min_distance`` (default ``2h``) from every handle."""
        h = self.grid.h
        min_distance = 2.0 * h if min_distance is None else min_distance
        handles = self.labels != PLUS
        if handles.any():
            dist = ndimage.distance_transform_edt(~handles, sampling=h)
        else:
            dist = np.full(self.grid.dims, np.inf)
        cyl = self.cylinder if unit is None else self.cylinders[unit]
        return cyl & (dist > min_distance)

    def anchor_cell(self, hid: int) -> tuple:
        """Handle cell closest to that handle's patch centre (used to pin pure-Neumann problems)."""
        cells = np.argwhere(self.handle_ids == hid)
        if len(cells) == 0:
            raise GeometryError(f"handle {hid} has no cells")
        centers = np.asarray(self.grid.origin) + (cells + 0.5) * self.grid.h
        target = np.asarray(self._patch_points[hid - 1])
        k = int(np.argmin(np.sum((centers - target) ** 2, axis=1)))
        return tuple(int(i) for i in cells[k])

    _patch_points: tuple = ()


def build_masks(spec: DomainSpec, grid: Grid3) -> RegionMasks:
    """Rasterize ``spec`` on ``grid``.

    Raises
    ------
    GeometryError
        If two different handles claim the same cell or share a face, or a
        handle does not reach the box boundary.  Softer problems (clearance
        below two cells, disconnected handles, cylinders not enclosed) are
        listed in ``RegionMasks.report`` and grouped by kind in
        ``RegionMasks.issues``.
    """
    X, Y, Z = grid.cell_centers()
    handles = spec.handles()
    ids = np.zeros(grid.dims, dtype=np.int16)
    cylinders = []
    report: list[str] = []
    issues: dict[str, list[str]] = {"clearance": [], "components": [], "enclosure": []}

    def note(kind, msg):
        report.append(msg)
        issues[kind].append(msg)

    hid = 0
    for unit in spec.units:
        cyl = unit.cylinder
        if cyl is not None:
            s, r = cyl.local(X, Y, Z)
            inside = (r < cyl.a) & (np.abs(s) < cyl.H / 2)
            cylinders.append(inside)
        for hs in unit.handles:
            hid += 1
            cells = np.zeros(grid.dims, dtype=bool)
            for line in hs.polylines:
                for p0, p1 in zip(line[:-1], line[1:]):
                    cells |= _segment_distance(X, Y, Z, p0, p1) < hs.tube_radius
            for lo, hi in hs.blocks:
                cells |= ((X > lo[0]) & (X < hi[0]) & (Y > lo[1]) & (Y < hi[1]) & (Z > lo[2]) & (Z < hi[2]))
            attach = np.zeros(grid.dims, dtype=bool)
            if cyl is not None and hs.attach == "disks":
                attach = (r < cyl.a - hs.inset) & (np.abs(s) >= cyl.H / 2) & (np.abs(s) < cyl.H / 2 + hs.thickness)
            elif cyl is not None and hs.attach == "lateral":
                attach = (r >= cyl.a) & (r < cyl.a + hs.thickness) & (np.abs(s) < cyl.H / 2 - hs.inset)
            cells |= attach
            if cyl is not None:
                cells &= ~inside
            clash = cells & (ids != 0)
            if clash.any():
                raise GeometryError(
                    f"handle {hid} overlaps handle {int(ids[clash].max())} in {int(clash.sum())} cells"
                )
            ids[cells] = hid
    # keep handle contact with the box inside each patch
    bnd_faces_x = [grid.face_centers(d) for d in range(3)]
    for k, hs in enumerate(handles, start=1):
        mine = ids == k
        for d in range(3):
            fx, fy, fz = bnd_faces_x[d]
            far = (fx - hs.patch.point[0]) ** 2 + (fy - hs.patch.point[1]) ** 2 + (fz - hs.patch.point[2]) ** 2
            far = far > hs.patch.radius**2
            lo_sl = [slice(None)] * 3
            hi_sl = [slice(None)] * 3
            lo_sl[d] = 0
            hi_sl[d] = -1
            for face_sl, cell_sl in ((tuple(lo_sl), tuple(lo_sl)), (tuple(hi_sl), tuple(hi_sl))):
                drop = mine[cell_sl] & far[face_sl]
                sub = ids[cell_sl]
                sub[drop] = 0
    for c in cylinders:
        ids[c] = 0
    roles = tuple(hs.role for hs in handles)
    role_lut = np.array((PLUS,) + roles, dtype=np.int8)
    labels = role_lut[ids]
    # different handles must not share a face
    for a in range(1, len(handles) + 1):
        for b in range(a + 1, len(handles) + 1):
            shared = Faces.between(ids == a, ids == b).count()
            if shared:
                raise GeometryError(f"handles {a} and {b} share {shared} faces")
    # clearance: at least two free cells between different handles
    for a in range(1, len(handles) + 1):
        near = ndimage.binary_dilation(ids == a, structure=_CUBE27, iterations=2)
        close = near & (ids > 0) & (ids != a)
        if close.any():
            others = sorted(set(int(i) for i in ids[close] if i > a))
            if others:
                note("clearance", f"clearance below two cells between handle {a} and handle(s) {others}")
    for k in range(1, len(handles) + 1):
        n_comp = ndimage.label(ids == k, structure=_FACE6)[1]
        if n_comp == 0:
            raise GeometryError(f"handle {k} vanished after rasterization")
        if n_comp > 1:
            note("components", f"handle {k} has {n_comp} face-connected components")
    boundary = []
    boundary_ids = []
    for d in range(3):
        lo, hi = _neighbours(ids > 0, d)
        shape = grid.face_shape(d)
        lab = np.full(shape, NOT_BOUNDARY, dtype=np.int8)
        hids = np.zeros(shape, dtype=np.int16)
        for idx, cell_idx in ((0, 0), (-1, -1)):
            fs = [slice(None)] * 3
            fs[d] = idx
            cs = [slice(None)] * 3
            cs[d] = cell_idx
            fs, cs = tuple(fs), tuple(cs)
            cell_ids = ids[cs]
            hids[fs] = cell_ids
            lab[fs] = role_lut[cell_ids]
        boundary.append(lab)
        boundary_ids.append(hids)
    boundary_ids = Faces(boundary_ids)
    for k in range(1, len(handles) + 1):
        if not any(np.any(b == k) for b in boundary_ids):
            raise GeometryError(f"handle {k} does not reach the box boundary inside its patch")
    plus_lab, n_plus = ndimage.label(ids == 0, structure=_FACE6)
    for u, c in enumerate(cylinders):
        comps = set(int(v) for v in np.unique(plus_lab[c]) if v > 0)
        box_touch = set(int(v) for v in np.unique(np.concatenate([
            plus_lab[0].ravel(), plus_lab[-1].ravel(), plus_lab[:, 0].ravel(),
            plus_lab[:, -1].ravel(), plus_lab[:, :, 0].ravel(), plus_lab[:, :, -1].ravel()])) if v > 0)
        if comps & box_touch:
            note("enclosure", f"cylinder {u} is not enclosed by its handles")
    masks = RegionMasks(grid, labels, ids, roles, Faces(boundary), boundary_ids, cylinders, report, issues)
    masks._patch_points = tuple(hs.patch.point for hs in handles)
    return masks


def write_masks_csv(masks: RegionMasks, path) -> Path:
    """Rows ``i,j,k,label`` in C order."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["i", "j", "k", "label"])
        for (i, j, k), v in np.ndenumerate(masks.labels):
            w.writerow([i, j, k, int(v)])
    return path


@dataclass
class ConductivityField:
    grid: Grid3
    values: np.ndarray
    eta: float | None = None


def conductivity(masks: RegionMasks, eta: float) -> ConductivityField:
    """``1/eta`` on every handle cell, 1 on PLUS."""
    if not (0.0 < eta < 1.0):
        raise DomainError(f"eta must lie in (0, 1), got {eta}")
    values = np.where(masks.labels != PLUS, 1.0 / eta, 1.0)
    return ConductivityField(masks.grid, values, float(eta))


def bump_kernel(eps: float, h: float) -> np.ndarray:
    """Discrete ``exp(1/(|x/eps|^2 - 1))`` on the lattice, normalized to unit sum."""
    m = int(math.ceil(eps / h))
    off = np.arange(-m, m + 1) * h
    ox, oy, oz = np.meshgrid(off, off, off, indexing="ij")
    q = (ox**2 + oy**2 + oz**2) / eps**2
    w = np.zeros_like(q)
    inside = q < 1.0
    w[inside] = np.exp(1.0 / (q[inside] - 1.0))
    return w / np.sum(w)


def mollify(sigma: ConductivityField, eps: float) -> ConductivityField:
    """Convolve with the bump kernel of radius ``eps``.

    Cells whose kernel footprint sees a single conductivity value keep it
    bit-for-bit; the output is clipped to the input range.

    Raises
    ------
    DomainError
        If ``eps < 2h``.
    """
    h = sigma.grid.h
    if not eps >= 2.0 * h * (1 - 1e-12):
        raise DomainError(f"mollifier radius {eps} below two grid spacings ({2 * h})")
    w = bump_kernel(eps, h)
    vals = sigma.values
    out = ndimage.convolve(vals, w, mode="nearest")
    fp = w > 0
    lo = ndimage.minimum_filter(vals, footprint=fp, mode="nearest")
    hi = ndimage.maximum_filter(vals, footprint=fp, mode="nearest")
    out = np.where(lo == hi, vals, np.clip(out, vals.min(), vals.max()))
    return ConductivityField(sigma.grid, out, sigma.eta)


# --- boundary data ------------------------------------------------------------

_ALLOWED_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
    "sqrt": np.sqrt, "abs": np.abs, "tanh": np.tanh, "arctan": np.arctan,
    "minimum": np.minimum, "maximum": np.maximum, "where": np.where, "sign": np.sign,
}
_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Compare, ast.BoolOp, ast.Call, ast.Name,
    ast.Load, ast.Constant, ast.operator, ast.unaryop, ast.cmpop, ast.boolop, ast.IfExp,
)


def compile_expression(text: str):
    """Validate ``text`` and return ``f(x, y, z, bounds)`` evaluating it with numpy."""
    tree = ast.parse(text, mode="eval")
    names = {"x", "y", "z", "xmin", "xmax", "ymin", "ymax", "zmin", "zmax", "pi", "e"} | set(_ALLOWED_FUNCS)
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise DomainError(f"disallowed syntax {type(node).__name__} in expression {text!r}")
        if isinstance(node, ast.Name) and node.id not in names:
            raise DomainError(f"unknown name {node.id!r} in expression {text!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _ALLOWED_FUNCS):
            raise DomainError(f"only whitelisted functions may be called in {text!r}")
    code = compile(tree, "<boundary-data>", "eval")

    def fn(x, y, z, lower, upper):
        env = dict(_ALLOWED_FUNCS)
        env.update(x=x, y=y, z=z, pi=math.pi, e=math.e,
                   xmin=lower[0], ymin=lower[1], zmin=lower[2],
                   xmax=upper[0], ymax=upper[1], zmax=upper[2])
        return np.broadcast_to(np.asarray(eval(code, {"__builtins__": {}}, env), dtype=float), x.shape)

    return fn


@dataclass(frozen=True)
class BoundaryData:
    """Closed-form expression on the box faces with constant overrides on patches.

    ``overrides`` maps ``"D1"``/``"D2"`` (every patch of that role) or
    ``"H<k>"`` (patch of handle ``k``) to a number.  For flux data the string
    ``"balance"`` picks the constant that makes the total flux vanish.
    """

    expression: str = "0"
    overrides: dict = field(default_factory=dict)

    def face_values(self, masks: RegionMasks) -> Faces:
        grid = masks.grid
        fn = compile_expression(self.expression)
        bnd = Faces.boundary(grid)
        vals = []
        for d in range(3):
            x, y, z = grid.face_centers(d)
            v = np.where(bnd[d], fn(x, y, z, grid.origin, grid.upper), 0.0)
            vals.append(v)
        vals = Faces(vals)
        balance = None
        for key, value in self.overrides.items():
            if key in ("D1", "D2"):
                sel = masks.dirichlet_patch(D1 if key == "D1" else D2)
            elif key.startswith("H") and key[1:].isdigit():
                sel = masks.patch_of_handle(int(key[1:]))
            else:
                raise DomainError(f"unknown override key {key!r}")
            if value == "balance":
                if balance is not None:
                    raise DomainError("only one patch may be balanced")
                balance = sel
                continue
            vals = Faces(np.where(m, float(value), v) for v, m in zip(vals, sel))
        if balance is not None:
            if balance.count() == 0:
                raise DomainError("balanced patch is empty")
            rest = vals.sum(bnd & ~balance)
            c = -rest / balance.count()
            vals = Faces(np.where(m, c, v) for v, m in zip(vals, balance))
        return vals

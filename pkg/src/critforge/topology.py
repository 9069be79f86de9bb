"""Certifying interior critical points of a gradient field.

The field of interest is ``F = R grad u`` on a probe sphere, with ``R`` a
fixed orthogonal reflection (``Diag(-1, 1, 1)`` by default, where the first
axis is the cylinder axis).  When ``nu . F > 0`` on the whole sphere, ``F``
is homotopic to the outward normal, so its degree is +1 and ``grad u`` has a
zero inside the ball.  The degree itself is computed from the signed solid
angles of the image triangles of an icosahedral mesh.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import ndimage

from .errors import ConvergenceError, DomainError, PreconditionError
from .grid import Grid3, ScalarField

__all__ = [
    "SphereProbe",
    "DegreeReport",
    "ZeroLocation",
    "DEFAULT_LEVEL",
    "REFLECTION",
    "icosphere",
    "gradient_sampler",
    "sample_gradient",
    "sign_condition",
    "degree_sum",
    "brouwer_degree",
    "locate_zero",
    "certify",
]

DEFAULT_LEVEL = 4
REFLECTION = np.diag([-1.0, 1.0, 1.0])
# the raw solid-angle sum must be this close to an integer
SNAP_TOL = 0.05
MARGIN_CELLS = 2

GradientFn = Callable[[np.ndarray], np.ndarray]


def icosphere(level: int = DEFAULT_LEVEL) -> tuple[np.ndarray, np.ndarray]:
    """Unit-sphere vertices and outward-oriented triangles of a refined icosahedron.

    Level ``l`` has ``20 * 4**l`` triangles and ``10 * 4**l + 2`` vertices.
    """
    if int(level) != level or level < 0:
        raise DomainError(f"refinement level must be a non-negative integer, got {level}")
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    pts = [np.array(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(int(level)):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = pts[i] + pts[j]
                pts.append(m / np.linalg.norm(m))
                cache[key] = len(pts) - 1
            return cache[key]

        refined = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            refined += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = refined
    vertices = np.array(pts)
    tris = np.array(faces, dtype=np.int64)
    # orient every triangle counter-clockwise seen from outside
    a, b, c = (vertices[tris[:, k]] for k in range(3))
    flip = np.einsum("ij,ij->i", a, np.cross(b, c)) < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return vertices, tris


@dataclass(frozen=True)
class SphereProbe:
    """Sphere of given centre and radius, meshed by a refined icosahedron."""

    center: tuple[float, float, float]
    radius: float
    level: int = DEFAULT_LEVEL
    normals: np.ndarray = field(init=False, repr=False, compare=False)
    triangles: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise DomainError(f"probe radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        normals, tris = _cached_icosphere(int(self.level))
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "triangles", tris)

    @property
    def vertices(self) -> np.ndarray:
        return np.asarray(self.center) + self.radius * self.normals

    def surface_area(self) -> float:
        """Total unsigned area of the flat mesh triangles."""
        v = self.vertices
        a, b, c = (v[self.triangles[:, k]] for k in range(3))
        return float(np.sum(0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)))

    def scaled(self, factor: float) -> "SphereProbe":
        return SphereProbe(self.center, self.radius * factor, self.level)


_ICOSPHERES: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _cached_icosphere(level):
    if level not in _ICOSPHERES:
        normals, tris = icosphere(level)
        normals.setflags(write=False)
        tris.setflags(write=False)
        _ICOSPHERES[level] = (normals, tris)
    return _ICOSPHERES[level]


@dataclass
class DegreeReport:
    min_normal_dot: float
    degree: int
    zero_point: tuple[float, float, float] | None
    min_field_norm_on_sphere: float
    refinement_level: int
    zero_gradient_norm: float | None = None
    max_field_norm_on_sphere: float | None = None

    def to_dict(self) -> dict:
        return {
            "min_normal_dot": self.min_normal_dot,
            "degree": self.degree,
            "zero_point": None if self.zero_point is None else list(self.zero_point),
            "min_field_norm_on_sphere": self.min_field_norm_on_sphere,
            "refinement_level": self.refinement_level,
            "zero_gradient_norm": self.zero_gradient_norm,
            "max_field_norm_on_sphere": self.max_field_norm_on_sphere,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


@dataclass(frozen=True)
class ZeroLocation:
    point: tuple[float, float, float]
    gradient_norm: float
    box_diameter: float
    depth: int


def gradient_sampler(field: ScalarField) -> GradientFn:
    """Gradient of the trilinear interpolant by central differences of step ``h``.

    The returned callable maps ``(n, 3)`` points to ``(n, 3)`` gradients and
    raises :class:`DomainError` for points closer than two cells to the
    edge of the grid's cell-centre lattice.
    """
    grid = field.grid
    if not isinstance(grid, Grid3):
        raise DomainError("gradient sampling needs a 3D cell grid")
    values = np.asarray(field.values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise DomainError("field has non-finite values")
    h = grid.h
    origin = np.asarray(grid.origin)
    lo = origin + (0.5 + MARGIN_CELLS) * h
    hi = origin + (np.asarray(grid.dims) - 0.5 - MARGIN_CELLS) * h

    def interp(points):
        idx = (points - origin) / h - 0.5
        return ndimage.map_coordinates(values, idx.T, order=1, mode="nearest")

    def grad(points):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        if np.any(p < lo - 1e-12 * h) or np.any(p > hi + 1e-12 * h):
            raise DomainError("sample point within two cells of the grid edge")
        out = np.empty_like(p)
        for d in range(3):
            step = np.zeros(3)
            step[d] = h
            out[:, d] = (interp(p + step) - interp(p - step)) / (2 * h)
        return out

    return grad


def _as_sampler(field) -> GradientFn:
    if isinstance(field, ScalarField):
        return gradient_sampler(field)
    if callable(field):
        return lambda pts: np.atleast_2d(np.asarray(field(np.atleast_2d(pts)), dtype=float))
    raise DomainError("expected a ScalarField or a callable gradient")


def sample_gradient(field: ScalarField, probe: SphereProbe) -> np.ndarray:
    """Gradient of ``field`` at every probe vertex, shape ``(n_vertices, 3)``."""
    return gradient_sampler(field)(probe.vertices)


def _reflection(R):
    if R is None:
        return REFLECTION
    R = np.asarray(R, dtype=float)
    return np.diag(R) if R.ndim == 1 else R


def sign_condition(samples, probe: SphereProbe, R=None) -> float:
    """Minimum over vertices of ``nu . (R sample)`` with ``nu`` the unit normal."""
    s = np.asarray(samples, dtype=float)
    if s.shape != probe.normals.shape:
        raise DomainError("samples are not aligned with the probe vertices")
    pushed = s @ _reflection(R).T
    return float(np.min(np.einsum("ij,ij->i", probe.normals, pushed)))


def degree_sum(samples, probe: SphereProbe) -> float:
    """Unrounded degree: signed solid angles of the image triangles over 4 pi.

    Raises
    ------
    PreconditionError
        If a sample vanishes or is not finite.
    """
    s = np.asarray(samples, dtype=float)
    if s.shape != probe.normals.shape:
        raise DomainError("samples are not aligned with the probe vertices")
    norms = np.linalg.norm(s, axis=1)
    if not np.all(np.isfinite(norms)) or np.any(norms == 0):
        raise PreconditionError("field vanishes (or is not finite) on the probe sphere")
    # scale each vector by its largest component first so tiny/huge fields do not underflow
    big = np.max(np.abs(s), axis=1, keepdims=True)
    u = s / big
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    a, b, c = (u[probe.triangles[:, k]] for k in range(3))
    num = np.einsum("ij,ij->i", a, np.cross(b, c))
    den = 1.0 + np.einsum("ij,ij->i", a, b) + np.einsum("ij,ij->i", b, c) + np.einsum("ij,ij->i", c, a)
    omega = 2.0 * np.arctan2(num, den)
    return math.fsum(omega) / (4.0 * math.pi)


def brouwer_degree(samples, probe: SphereProbe) -> int:
    """Degree of ``p -> F(p)/|F(p)|`` from samples of ``F`` at the probe vertices.

    Raises
    ------
    PreconditionError
        If a sample vanishes on the sphere.
    ConvergenceError
        If the raw sum is further than 0.05 from an integer; a finer mesh or a
        smaller sphere is needed.
    """
    raw = degree_sum(samples, probe)
    deg = round(raw)
    if abs(raw - deg) > SNAP_TOL:
        raise ConvergenceError(f"solid-angle sum {raw:.4f} is not close to an integer", stage=probe.level)
    return int(deg)


# boxes are probed on slightly enlarged circumscribed spheres so that a zero on
# a shared box corner is strictly inside every neighbouring sphere
_BOX_SPHERE = 1.1 * math.sqrt(3.0)


def _box_degree(grad, center, half, level):
    probe = SphereProbe(tuple(center), half * _BOX_SPHERE, level)
    try:
        return brouwer_degree(grad(probe.vertices), probe)
    except PreconditionError:
        # a zero sits on the sphere itself, so keep the box
        return None
    except ConvergenceError:
        return None


def locate_zero(field, probe: SphereProbe, tol: float, level: int | None = None, max_depth: int = 40) -> ZeroLocation:
    """Shrink boxes around a zero of the gradient by octant subdivision.

    ``field`` is a :class:`ScalarField` (its gradient is sampled) or a
    callable returning gradients at ``(n, 3)`` points.  The search starts
    from the cube circumscribing the probe ball.  Each stage splits the
    surviving boxes into octants and keeps those whose circumscribed sphere
    carries a nonzero degree.  It stops once a box diameter is at most
    ``tol`` and returns the centre of the kept box with the smallest
    gradient there.

    Raises
    ------
    PreconditionError
        If the degree on the probe sphere is zero.
    ConvergenceError
        If every octant loses the degree at some stage.  The error carries
        ``stage`` and ``best`` (the lowest-gradient centre seen so far).
    """
    if not tol > 0:
        raise DomainError("tol must be positive")
    grad = _as_sampler(field)
    level = min(probe.level, 3) if level is None else level
    if brouwer_degree(grad(probe.vertices), probe) == 0:
        raise PreconditionError("degree on the probe sphere is zero; no zero is certified")

    center = np.asarray(probe.center, dtype=float)
    boxes = [(center, probe.radius)]
    offsets = np.array([[i, j, k] for i in (-1, 1) for j in (-1, 1) for k in (-1, 1)], float)
    best = None
    for depth in range(1, max_depth + 1):
        children = []
        for c, half in boxes:
            for off in offsets:
                cc = c + off * half / 2
                deg = _box_degree(grad, cc, half / 2, level)
                gnorm = float(np.linalg.norm(grad(cc[None, :])[0]))
                if best is None or gnorm < best.gradient_norm:
                    best = ZeroLocation(tuple(cc), gnorm, half * math.sqrt(3.0), depth)
                if deg is None or deg != 0:
                    children.append((gnorm, cc, half / 2))
        if not children:
            err = ConvergenceError(f"all octants lost the degree at subdivision stage {depth}", stage=depth)
            err.best = best
            raise err
        children.sort(key=lambda t: t[0])
        # keep the search narrow; a simple zero survives in at most 8 boxes
        boxes = [(cc, half) for _, cc, half in children[:8]]
        g0, c0, half0 = children[0]
        if 2 * half0 * math.sqrt(3.0) <= tol:
            return ZeroLocation(tuple(float(x) for x in c0), g0, 2 * half0 * math.sqrt(3.0), depth)
    err = ConvergenceError("maximum subdivision depth reached", stage=max_depth)
    err.best = best
    raise err


def certify(field, probe: SphereProbe, R=None, tol: float | None = None) -> DegreeReport:
    """Sign condition, degree and (when the degree is nonzero) a located zero.

    A zero degree, or a field vanishing on the sphere, yields a report with
    ``zero_point=None`` rather than an error.
    """
    grad = _as_sampler(field)
    samples = grad(probe.vertices)
    Rm = _reflection(R)
    pushed = samples @ Rm.T
    norms = np.linalg.norm(samples, axis=1)
    min_dot = sign_condition(samples, probe, Rm)
    try:
        degree = brouwer_degree(pushed, probe)
    except PreconditionError:
        degree = 0
    zero = None
    zero_norm = None
    if degree != 0:
        if tol is None:
            h = field.grid.h if isinstance(field, ScalarField) else probe.radius / 64
            tol = h / 4
        loc = locate_zero(grad, probe, tol)
        zero = loc.point
        zero_norm = loc.gradient_norm
    return DegreeReport(
        min_normal_dot=min_dot,
        degree=int(degree),
        zero_point=zero,
        min_field_norm_on_sphere=float(norms.min()),
        refinement_level=probe.level,
        zero_gradient_norm=zero_norm,
        max_field_norm_on_sphere=float(norms.max()),
    )

"""Structured grids, cell fields and face arrays.

A :class:`Grid3` is a box of cubic cells.  Cell ``(i, j, k)`` has centre
``origin + (i + 1/2, j + 1/2, k + 1/2) * h``.  Faces normal to axis ``d`` are
stored in arrays with one extra entry along ``d``: face ``i`` separates cells
``i - 1`` and ``i``, and faces ``0`` and ``n_d`` lie on the box boundary.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError

__all__ = [
    "Grid3",
    "AxisymGrid",
    "ScalarField",
    "Faces",
    "write_field_csv",
    "write_field_binary",
    "read_field_binary",
]


@dataclass(frozen=True)
class Grid3:
    origin: tuple[float, float, float]
    h: float
    dims: tuple[int, int, int]

    def __post_init__(self):
        if not self.h > 0:
            raise DomainError("grid spacing must be positive")
        if len(self.dims) != 3 or any(int(n) < 2 for n in self.dims):
            raise DomainError("grid needs at least 2 cells per axis")
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @classmethod
    def cube(cls, lower: float, upper: float, n: int) -> "Grid3":
        """Cubic box ``[lower, upper]^3`` split into ``n`` cells per axis."""
        return cls((lower,) * 3, (upper - lower) / n, (n, n, n))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.dims))

    @property
    def upper(self) -> tuple[float, float, float]:
        return tuple(o + n * self.h for o, n in zip(self.origin, self.dims))

    def axis_centers(self, d: int) -> np.ndarray:
        return self.origin[d] + (np.arange(self.dims[d]) + 0.5) * self.h

    def axis_faces(self, d: int) -> np.ndarray:
        return self.origin[d] + np.arange(self.dims[d] + 1) * self.h

    def cell_centers(self):
        """Three arrays of cell-centre coordinates, shape ``dims``."""
        return np.meshgrid(*(self.axis_centers(d) for d in range(3)), indexing="ij")

    def face_shape(self, d: int) -> tuple[int, int, int]:
        shape = list(self.dims)
        shape[d] += 1
        return tuple(shape)

    def face_centers(self, d: int):
        axes = [self.axis_centers(e) if e != d else self.axis_faces(e) for e in range(3)]
        return np.meshgrid(*axes, indexing="ij")

    def cell_index(self, point) -> tuple[int, int, int]:
        """Index of the cell containing ``point`` (clamped to the grid)."""
        idx = np.floor((np.asarray(point, float) - np.asarray(self.origin)) / self.h).astype(int)
        return tuple(int(np.clip(i, 0, n - 1)) for i, n in zip(idx, self.dims))


@dataclass(frozen=True)
class AxisymGrid:
    """Node-centred ``(r, z)`` grid on ``[0, r_max] x [z_min, z_max]``."""

    r_max: float
    z_min: float
    z_max: float
    nr: int
    nz: int

    @property
    def dr(self) -> float:
        return self.r_max / (self.nr - 1)

    @property
    def dz(self) -> float:
        return (self.z_max - self.z_min) / (self.nz - 1)

    def r(self) -> np.ndarray:
        return np.linspace(0.0, self.r_max, self.nr)

    def z(self) -> np.ndarray:
        return np.linspace(self.z_min, self.z_max, self.nz)


@dataclass
class ScalarField:
    """Values on a grid; cell-centred for :class:`Grid3`, nodal for :class:`AxisymGrid`.

    For :class:`AxisymGrid` the array is indexed ``[i_z, j_r]``.
    """

    grid: Grid3 | AxisymGrid
    values: np.ndarray


class Faces:
    """One array per face orientation (normal along x, y, z)."""

    __slots__ = ("arrays",)

    def __init__(self, arrays):
        self.arrays = tuple(arrays)

    @classmethod
    def full(cls, grid: Grid3, fill, dtype=float) -> "Faces":
        return cls(np.full(grid.face_shape(d), fill, dtype=dtype) for d in range(3))

    @classmethod
    def zeros(cls, grid: Grid3, dtype=float) -> "Faces":
        return cls.full(grid, 0, dtype)

    @classmethod
    def boundary(cls, grid: Grid3) -> "Faces":
        """Mask of the faces lying on the box boundary."""
        out = cls.zeros(grid, bool)
        for d, arr in enumerate(out.arrays):
            idx = [slice(None)] * 3
            idx[d] = 0
            arr[tuple(idx)] = True
            idx[d] = -1
            arr[tuple(idx)] = True
        return out

    @classmethod
    def between(cls, a: np.ndarray, b: np.ndarray) -> "Faces":
        """Interior faces with a cell of mask ``a`` on one side and ``b`` on the other."""
        out = []
        for d in range(3):
            lo, hi = _neighbours(a, d)
            lo_b, hi_b = _neighbours(b, d)
            out.append((lo & hi_b) | (hi & lo_b))
        return cls(out)

    @classmethod
    def of_cells(cls, mask: np.ndarray) -> "Faces":
        """Faces with exactly one adjacent cell in ``mask`` (box faces included)."""
        out = []
        for d in range(3):
            lo, hi = _neighbours(mask, d)
            out.append(lo ^ hi)
        return cls(out)

    def __getitem__(self, d):
        return self.arrays[d]

    def __iter__(self):
        return iter(self.arrays)

    def __or__(self, other):
        return Faces(a | b for a, b in zip(self, other))

    def __and__(self, other):
        return Faces(a & b for a, b in zip(self, other))

    def __invert__(self):
        return Faces(~a for a in self)

    def where(self, mask: "Faces", other: "Faces") -> "Faces":
        return Faces(np.where(m, a, b) for a, m, b in zip(self, mask, other))

    def copy(self) -> "Faces":
        return Faces(a.copy() for a in self)

    def count(self) -> int:
        return int(sum(int(np.count_nonzero(a)) for a in self))

    def any(self) -> bool:
        return any(bool(np.any(a)) for a in self)

    def sum(self, mask: "Faces | None" = None) -> float:
        if mask is None:
            return float(sum(np.sum(a) for a in self))
        return float(sum(np.sum(a[m]) for a, m in zip(self, mask)))

    def equals(self, other: "Faces") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self, other))

    @classmethod
    def from_function(cls, grid: Grid3, fn, mask: "Faces | None" = None) -> "Faces":
        """Evaluate ``fn(x, y, z)`` at face centres (optionally only on ``mask``)."""
        out = []
        for d in range(3):
            x, y, z = grid.face_centers(d)
            vals = np.broadcast_to(np.asarray(fn(x, y, z), dtype=float), x.shape).copy()
            if mask is not None:
                vals[~mask[d]] = 0.0
            out.append(vals)
        return cls(out)


def _neighbours(mask, d):
    """Per face along ``d``: is the lower / upper adjacent cell in ``mask``."""
    pad = [(0, 0)] * 3
    pad[d] = (1, 1)
    p = np.pad(mask, pad, constant_values=False)
    lo = [slice(None)] * 3
    hi = [slice(None)] * 3
    lo[d] = slice(None, -1)
    hi[d] = slice(1, None)
    return p[tuple(lo)], p[tuple(hi)]


def pad_along(arr, d, fill):
    pad = [(0, 0)] * 3
    pad[d] = (1, 1)
    p = np.pad(arr, pad, constant_values=fill)
    lo = [slice(None)] * 3
    hi = [slice(None)] * 3
    lo[d] = slice(None, -1)
    hi[d] = slice(1, None)
    return p[tuple(lo)], p[tuple(hi)]


def write_field_csv(field: ScalarField, path) -> Path:
    """Write ``i,j,k,value`` rows in C order (NaN for cells outside a solved region)."""
    path = Path(path)
    vals = field.values
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        if vals.ndim == 3:
            w.writerow(["i", "j", "k", "value"])
            for (i, j, k), v in np.ndenumerate(vals):
                w.writerow([i, j, k, repr(float(v))])
        else:
            w.writerow(["i", "j", "value"])
            for (i, j), v in np.ndenumerate(vals):
                w.writerow([i, j, repr(float(v))])
    return path


def write_field_binary(field: ScalarField, path) -> tuple[Path, Path]:
    """Flat little-endian float64 block in C order plus a JSON sidecar."""
    path = Path(path)
    data = np.ascontiguousarray(field.values, dtype="<f8")
    path.write_bytes(data.tobytes(order="C"))
    g = field.grid
    if isinstance(g, Grid3):
        meta = {"kind": "cells3d", "dims": list(g.dims), "origin": list(g.origin), "spacing": g.h}
    else:
        meta = {
            "kind": "axisym_nodes",
            "dims": [g.nz, g.nr],
            "r_max": g.r_max,
            "z_min": g.z_min,
            "z_max": g.z_max,
        }
    meta.update({"dtype": "float64", "byte_order": "little", "order": "C"})
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path, sidecar


def read_field_binary(path) -> ScalarField:
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text(encoding="utf-8"))
    values = np.frombuffer(path.read_bytes(), dtype="<f8").reshape(meta["dims"]).copy()
    if meta["kind"] == "cells3d":
        grid = Grid3(tuple(meta["origin"]), meta["spacing"], tuple(meta["dims"]))
    else:
        nz, nr = meta["dims"]
        grid = AxisymGrid(meta["r_max"], meta["z_min"], meta["z_max"], nr, nz)
    return ScalarField(grid, values)

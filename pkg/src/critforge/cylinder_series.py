"""Exact solution of the two-level limit problem in a finite cylinder.

The cylinder is ``{|x1| < H/2, x2**2 + x3**2 < a**2}``.  Throughout this
module the first Cartesian coordinate ``x1`` is the cylinder axis (``z`` in
cylindrical coordinates) and ``r`` is the distance from that axis.  The
harmonic function ``u*`` equals 1 on the two end disks and 2 on the lateral
surface; with ``u = u* - 1``

    u(r, z) = sum_k c_k cos(w_k z) I0(w_k r),   w_k = (2k+1) pi / H,
    c_k = 4 (-1)^k / (pi (2k+1) I0(w_k a)).

The Hessian of ``u*`` at the origin is ``Diag(-2 lam, lam, lam)``.  The
corner circles ``r = a, z = +-H/2`` carry a jump in the boundary data and are
excluded from every accuracy statement.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConvergenceError, DomainError
from .specfun import _Compensated, _i0e, _i1e, bessel_i0, bessel_i0_d2

__all__ = [
    "CylinderSpec",
    "SeriesSolution",
    "SaddleReport",
    "SphereGradient",
    "LambdaRow",
    "coefficients",
    "eval_u",
    "grad_ustar",
    "hessian_at_origin",
    "lambda_sweep",
    "gradient_on_cylinder_sphere",
    "write_lambda_csv",
]

DEFAULT_TRUNCATION = 200
HESSIAN_RTOL = 1e-10
# terms with w_k (a - r) above this are below 1e-18 relative and skipped
_DECAY_CUTOFF = 50.0


@dataclass(frozen=True)
class CylinderSpec:
    """Cylinder of total height ``H`` (axis range ``(-H/2, H/2)``) and radius ``a``."""

    H: float = 4.0
    a: float = 1.0
    K: int = DEFAULT_TRUNCATION

    def __post_init__(self):
        if not (math.isfinite(self.H) and self.H > 0):
            raise DomainError(f"cylinder height must be positive, got {self.H}")
        if not (math.isfinite(self.a) and self.a > 0):
            raise DomainError(f"cylinder radius must be positive, got {self.a}")
        if int(self.K) != self.K or self.K < 1:
            raise DomainError(f"truncation K must be an integer >= 1, got {self.K}")

    def frequencies(self) -> np.ndarray:
        return (2 * np.arange(self.K) + 1) * math.pi / self.H


@dataclass(frozen=True)
class SeriesSolution:
    spec: CylinderSpec
    coeffs: np.ndarray = field(repr=False)
    offset: float = 1.0


@dataclass(frozen=True)
class SaddleReport:
    """Diagonal Hessian of ``u*`` at the origin, ordered (axis, radial, radial)."""

    lam: float
    hessian_diag: tuple[float, float, float]
    trace_residual: float
    saddle_confirmed: bool


@dataclass(frozen=True)
class SphereGradient:
    points: np.ndarray
    gradients: np.ndarray
    normal_dot: np.ndarray
    minimum: float


@dataclass(frozen=True)
class LambdaRow:
    H: float
    a: float
    K: int
    lam: float
    trace_residual: float


def coefficients(spec: CylinderSpec) -> SeriesSolution:
    """Series coefficients ``c_k``; coefficients past I0 overflow are exactly 0."""
    k = np.arange(spec.K)
    with np.errstate(over="ignore"):
        i0 = bessel_i0(spec.frequencies() * spec.a)
        coeffs = 4.0 * (-1.0) ** k / (math.pi * (2 * k + 1) * i0)
    coeffs.setflags(write=False)
    return SeriesSolution(spec, coeffs, 1.0)


def _amplitudes(spec):
    k = np.arange(spec.K)
    return 4.0 * (-1.0) ** k / (math.pi * (2 * k + 1))


def _check_inside(spec, r, z):
    tol = 1e-12 * max(spec.a, spec.H)
    if np.any(r < -tol) or np.any(r > spec.a + tol):
        raise DomainError("radial coordinate outside [0, a]")
    if np.any(np.abs(z) > spec.H / 2 + tol):
        raise DomainError("axial coordinate outside [-H/2, H/2]")


def _cospi(t):
    """cos(pi t), exactly zero at half-integers."""
    t = np.remainder(t, 2.0)
    out = np.cos(math.pi * t)
    out[(t == 0.5) | (t == 1.5)] = 0.0
    return out


def _sinpi(t):
    """sin(pi t), exactly zero at integers."""
    t = np.remainder(t, 2.0)
    out = np.sin(math.pi * t)
    out[(t == 0.0) | (t == 1.0)] = 0.0
    return out


def _bessel_ratio(w, r, a, scaled_fn):
    """``I(w r) / I0(w a)`` using exponentially scaled Bessel functions."""
    out = np.zeros_like(r)
    live = w * (a - r) < _DECAY_CUTOFF
    if np.any(live):
        wr = w * r[live]
        out[live] = np.exp(wr - w * a) * scaled_fn(wr) / _i0e(np.array([w * a]))[0]
    return out


def eval_u(series: SeriesSolution, r, z, with_bound: bool = False):
    """Evaluate ``u*`` at cylindrical coordinates ``(r, z)``.

    With ``with_bound=True`` also return the magnitude of the first omitted
    term, which bounds the truncation error at interior points.
    """
    spec = series.spec
    r_arr, z_arr = np.broadcast_arrays(np.asarray(r, float), np.asarray(z, float))
    _check_inside(spec, r_arr, z_arr)
    rr = np.clip(r_arr.ravel(), 0.0, spec.a)
    zz = z_arr.ravel()
    acc = _Compensated(rr.shape)
    zh = zz / spec.H
    for k, (w, amp) in enumerate(zip(spec.frequencies(), _amplitudes(spec))):
        acc.add(amp * _cospi((2 * k + 1) * zh) * _bessel_ratio(w, rr, spec.a, _i0e))
    value = (series.offset + acc.result()).reshape(r_arr.shape)
    if np.ndim(r) == 0 and np.ndim(z) == 0:
        value = float(value)
    if not with_bound:
        return value
    w_next = (2 * spec.K + 1) * math.pi / spec.H
    amp_next = 4.0 / (math.pi * (2 * spec.K + 1))
    bound = (amp_next * _bessel_ratio(w_next, rr, spec.a, _i0e)).reshape(r_arr.shape)
    return value, (float(bound) if np.ndim(value) == 0 else bound)


def grad_ustar(series: SeriesSolution, points) -> np.ndarray:
    """Cartesian gradient of ``u*`` by termwise differentiation; axis is ``x1``."""
    spec = series.spec
    p = np.atleast_2d(np.asarray(points, dtype=float))
    z = p[:, 0]
    rho = np.hypot(p[:, 1], p[:, 2])
    _check_inside(spec, rho, z)
    rr = np.clip(rho, 0.0, spec.a)
    dz = _Compensated(rr.shape)
    dr = _Compensated(rr.shape)
    zh = z / spec.H
    for k, (w, amp) in enumerate(zip(spec.frequencies(), _amplitudes(spec))):
        dz.add(-amp * w * _sinpi((2 * k + 1) * zh) * _bessel_ratio(w, rr, spec.a, _i0e))
        dr.add(amp * w * _cospi((2 * k + 1) * zh) * _bessel_ratio(w, rr, spec.a, _i1e))
    d_r = dr.result()
    safe = np.where(rho > 0, rho, 1.0)
    grad = np.empty_like(p)
    grad[:, 0] = dz.result()
    grad[:, 1] = np.where(rho > 0, d_r * p[:, 1] / safe, 0.0)
    grad[:, 2] = np.where(rho > 0, d_r * p[:, 2] / safe, 0.0)
    return grad


def hessian_at_origin(series: SeriesSolution) -> SaddleReport:
    """Hessian diagonal of ``u*`` at the origin from the two series.

    The axial entry uses ``-(4 pi / H^2) sum (-1)^k (2k+1) / I0(w_k a)``, the
    radial entries ``sum c_k w_k^2 I0''(0)``.  A non-negative axial entry is
    reported through ``saddle_confirmed=False`` rather than assumed away.

    Raises
    ------
    ConvergenceError
        If the last retained term exceeds ``1e-10`` of the partial sum.
    """
    spec = series.spec
    w = spec.frequencies()
    k = np.arange(spec.K)
    with np.errstate(over="ignore"):
        i0a = bessel_i0(w * spec.a)
    axial_terms = (-1.0) ** k * (2 * k + 1) / i0a
    axial_sum = math.fsum(axial_terms)
    d2_axis = -4.0 * math.pi / spec.H**2 * axial_sum
    radial_terms = series.coeffs * w**2 * bessel_i0_d2(0.0)
    lam = math.fsum(radial_terms)
    for name, terms, total in (("axial", axial_terms, axial_sum), ("radial", radial_terms, lam)):
        if abs(terms[-1]) > HESSIAN_RTOL * abs(total):
            raise ConvergenceError(
                f"{name} Hessian series not converged at K={spec.K} "
                f"(last term {terms[-1]:.3e}, sum {total:.3e})"
            )
    return SaddleReport(
        lam=lam,
        hessian_diag=(d2_axis, lam, lam),
        trace_residual=abs(d2_axis + 2.0 * lam),
        saddle_confirmed=bool(d2_axis < 0 and lam > 0),
    )


def lambda_sweep(H_values: Iterable[float], a: float, K: int = DEFAULT_TRUNCATION) -> list[LambdaRow]:
    rows = []
    for H in H_values:
        spec = CylinderSpec(float(H), float(a), int(K))
        rep = hessian_at_origin(coefficients(spec))
        rows.append(LambdaRow(spec.H, spec.a, spec.K, rep.lam, rep.trace_residual))
    return rows


def write_lambda_csv(rows: Sequence[LambdaRow], path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(["H", "a", "K", "lambda", "trace_residual"])
        for row in rows:
            writer.writerow([repr(row.H), repr(row.a), row.K, repr(row.lam), repr(row.trace_residual)])
    return path


def fibonacci_sphere(n: int) -> np.ndarray:
    """``n`` nearly uniform unit vectors (golden-angle spiral)."""
    i = np.arange(n) + 0.5
    polar = np.arccos(1.0 - 2.0 * i / n)
    azim = math.pi * (1.0 + math.sqrt(5.0)) * i
    return np.column_stack([np.cos(polar), np.sin(polar) * np.cos(azim), np.sin(polar) * np.sin(azim)])


def gradient_on_cylinder_sphere(series: SeriesSolution, ball_radius: float, n_samples: int = 2000) -> SphereGradient:
    """Sample ``nu . (R grad u*)`` on the sphere of radius ``ball_radius`` about O.

    ``R = Diag(-1, 1, 1)``; the minimum over samples estimates ``8 mu``.
    """
    spec = series.spec
    if not (0 < ball_radius < min(spec.a, spec.H / 2)):
        raise DomainError("probe ball must lie strictly inside the cylinder")
    normals = fibonacci_sphere(int(n_samples))
    points = ball_radius * normals
    grads = grad_ustar(series, points)
    rgrad = grads * np.array([-1.0, 1.0, 1.0])
    dots = np.einsum("ij,ij->i", normals, rgrad)
    return SphereGradient(points, grads, dots, float(dots.min()))

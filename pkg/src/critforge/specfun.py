"""Modified Bessel function of the first kind, order zero, and its derivatives.

Two evaluation branches are used: the ascending power series for
``0 <= x <= 15`` and the Hankel large-argument expansion above that.  Every
summation is Neumaier-compensated so the rounding error does not grow with
the number of terms.  All functions accept scalars or arrays.

The exponentially scaled forms ``exp(-x) I(x)`` are kept private; the
cylinder series uses them to form ratios ``I0(s)/I0(t)`` without overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

__all__ = ["BesselEval", "bessel_i0", "bessel_i0_d2", "i0_eval"]

SERIES_CUTOFF = 15.0
_EPS = 1e-17
_MAX_TERMS = 400


@dataclass(frozen=True)
class BesselEval:
    """Value and first two derivatives of I0 at one point."""

    value: float
    d1: float
    d2: float


class _Compensated:
    """Vectorized Neumaier summation."""

    def __init__(self, shape):
        self.total = np.zeros(shape)
        self.comp = np.zeros(shape)

    def add(self, term):
        t = self.total + term
        big = np.abs(self.total) >= np.abs(term)
        self.comp += np.where(big, (self.total - t) + term, (term - t) + self.total)
        self.total = t

    def result(self):
        return self.total + self.comp


def _check(x):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("Bessel argument must be finite")
    if np.any(arr < 0):
        raise DomainError("Bessel argument must be non-negative")
    return arr


def _series(x, kind):
    """Ascending series; ``kind`` is 'i0', 'i1' or 'd2' (second derivative of I0)."""
    q = 0.25 * x * x
    if kind == "i0":
        term = np.ones_like(x)
    elif kind == "i1":
        term = 0.5 * x
    else:
        term = np.full_like(x, 0.5)
    acc = _Compensated(x.shape)
    acc.add(term)
    for m in range(1, _MAX_TERMS):
        if kind == "i0":
            term = term * q / (m * m)
        elif kind == "i1":
            term = term * q / (m * (m + 1))
        else:
            # ratio of consecutive termwise second derivatives x^(2m) / (4^m m!^2)
            term = term * (2 * m + 1) * x * x / (4.0 * (m + 1) * m * (2 * m - 1))
        acc.add(term)
        s = acc.result()
        if np.all(term <= _EPS * np.maximum(s, 1e-300)):
            break
    return acc.result()


def _asymptotic_scaled(x, nu):
    """exp(-x) I_nu(x) from the Hankel expansion, optimally truncated."""
    acc = _Compensated(x.shape)
    term = np.ones_like(x)
    acc.add(term)
    active = np.ones(x.shape, dtype=bool)
    prev = np.abs(term)
    for k in range(1, _MAX_TERMS):
        new = term * ((2 * k - 1) ** 2 - 4 * nu * nu) / (8.0 * k * x)
        mag = np.abs(new)
        # stop each point once terms stop shrinking or fall below rounding level
        active &= (mag < prev) & (mag > _EPS * np.abs(acc.result()))
        if not np.any(active):
            break
        acc.add(np.where(active, new, 0.0))
        term = np.where(active, new, term)
        prev = np.where(active, mag, prev)
    return acc.result() / np.sqrt(2.0 * math.pi * x)


def _i0e(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    lo = x <= SERIES_CUTOFF
    if np.any(lo):
        out[lo] = np.exp(-x[lo]) * _series(x[lo], "i0")
    if np.any(~lo):
        out[~lo] = _asymptotic_scaled(x[~lo], 0)
    return out


def _i1e(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    lo = x <= SERIES_CUTOFF
    if np.any(lo):
        out[lo] = np.exp(-x[lo]) * _series(x[lo], "i1")
    if np.any(~lo):
        out[~lo] = _asymptotic_scaled(x[~lo], 1)
    return out


def _unscale(scaled, x):
    with np.errstate(over="ignore"):
        return scaled * np.exp(x)


def _finish(out, x):
    return float(out) if np.ndim(x) == 0 else out


def bessel_i0(x):
    """Modified Bessel function I0(x) for real ``x >= 0``.

    Overflows to ``inf`` for ``x`` beyond roughly 713.

    Raises
    ------
    DomainError
        If ``x`` is negative or not finite.
    """
    arr = _check(x)
    flat = np.atleast_1d(arr)
    out = np.empty_like(flat)
    lo = flat <= SERIES_CUTOFF
    if np.any(lo):
        out[lo] = _series(flat[lo], "i0")
    if np.any(~lo):
        out[~lo] = _unscale(_asymptotic_scaled(flat[~lo], 0), flat[~lo])
    return _finish(out.reshape(arr.shape), x)


def _bessel_i1(x):
    arr = _check(x)
    flat = np.atleast_1d(arr)
    out = np.empty_like(flat)
    lo = flat <= SERIES_CUTOFF
    if np.any(lo):
        out[lo] = _series(flat[lo], "i1")
    if np.any(~lo):
        out[~lo] = _unscale(_asymptotic_scaled(flat[~lo], 1), flat[~lo])
    return _finish(out.reshape(arr.shape), x)


def bessel_i0_d2(x):
    """Second derivative of I0.

    Uses the termwise differentiated series up to the branch cutoff and
    ``I0'' = I0 - I1/x`` above it.
    """
    arr = _check(x)
    flat = np.atleast_1d(arr)
    out = np.empty_like(flat)
    lo = flat <= SERIES_CUTOFF
    if np.any(lo):
        out[lo] = _series(flat[lo], "d2")
    if np.any(~lo):
        xs = flat[~lo]
        scaled = _asymptotic_scaled(xs, 0) - _asymptotic_scaled(xs, 1) / xs
        out[~lo] = _unscale(scaled, xs)
    return _finish(out.reshape(arr.shape), x)


def i0_eval(x: float) -> BesselEval:
    """I0, I0' (= I1) and I0'' at a single point."""
    if np.ndim(x) != 0:
        raise DomainError("i0_eval takes a scalar argument")
    return BesselEval(bessel_i0(x), _bessel_i1(x), bessel_i0_d2(x))

from __future__ import annotations

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from critforge.errors import DomainError
from critforge.specfun import bessel_i0, bessel_i0_d2, i0_eval

mpmath.mp.dps = 40


def ref(x):
    x = mpmath.mpf(x)
    i0, i1 = mpmath.besseli(0, x), mpmath.besseli(1, x)
    d2 = i0 - i1 / x if x != 0 else mpmath.mpf(1) / 2
    return float(i0), float(i1), float(d2)


@pytest.mark.parametrize("x", [0.0, 1e-8, 0.5, 1.0, 3.7, 9.99, 14.9, 15.0, 15.1, 22.0, 87.3, 300.0, 700.0])
def test_matches_extended_precision(x):
    i0, i1, d2 = ref(x)
    ev = i0_eval(x)
    assert ev.value == pytest.approx(i0, rel=1e-12)
    assert ev.d1 == pytest.approx(i1, rel=1e-12, abs=1e-300)
    assert ev.d2 == pytest.approx(d2, rel=1e-10)


def test_branches_agree_on_overlap_band():
    xs = np.linspace(10.0, 20.0, 81)
    got = bessel_i0(xs)
    want = np.array([ref(x)[0] for x in xs])
    np.testing.assert_allclose(got, want, rtol=1e-12)
    np.testing.assert_allclose(bessel_i0_d2(xs), [ref(x)[2] for x in xs], rtol=1e-10)


def test_forty_term_partial_sum_at_one():
    s40 = math.fsum(0.25**m / math.factorial(m) ** 2 for m in range(40))
    assert abs(bessel_i0(1.0) - s40) <= 1e-12 * s40


def test_second_derivative_against_finite_difference():
    h = 1e-4
    fd = (bessel_i0(2 + h) - 2 * bessel_i0(2.0) + bessel_i0(2 - h)) / h**2
    assert bessel_i0_d2(2.0) == pytest.approx(fd, rel=1e-6)


def test_second_derivative_on_random_points():
    rng = np.random.default_rng(7)
    h = 1e-4
    for x in rng.uniform(h, 20.0, 100):
        fd = (bessel_i0(x + h) - 2 * bessel_i0(x) + bessel_i0(x - h)) / h**2
        assert abs(bessel_i0_d2(x) - fd) <= 1e-5 * (1 + bessel_i0(x))


def test_values_at_zero():
    ev = i0_eval(0.0)
    assert ev.value == 1.0
    assert ev.d1 == 0.0
    assert ev.d2 == 0.5


def test_overflow_is_inf():
    with np.errstate(over="ignore"):
        assert math.isinf(bessel_i0(800.0))


@pytest.mark.parametrize("bad", [-1e-12, -3.0, math.nan, math.inf])
def test_rejects_bad_arguments(bad):
    with pytest.raises(DomainError):
        bessel_i0(bad)


def test_scalar_only_eval():
    with pytest.raises(DomainError):
        i0_eval(np.array([1.0, 2.0]))


def test_array_shape_preserved():
    x = np.linspace(0, 40, 12).reshape(3, 4)
    assert bessel_i0(x).shape == (3, 4)


@given(st.floats(0.0, 600.0), st.floats(1e-6, 50.0))
def test_monotone_and_bounded_below(x, dx):
    ev = i0_eval(x)
    assert ev.value >= 1.0
    assert ev.d1 >= 0.0
    assert bessel_i0(x + dx) > ev.value


@given(st.floats(0.0, 600.0))
def test_dominates_two_term_series(x):
    assert bessel_i0(x) >= 1 + x * x / 4


@given(st.floats(0.0, 600.0))
def test_second_derivative_positive(x):
    assert bessel_i0_d2(x) > 0


@given(st.floats(0.1, 100.0))
def test_modified_bessel_equation(x):
    # x I0'' + I0' - x I0 = 0
    ev = i0_eval(x)
    assert abs(x * ev.d2 + ev.d1 - x * ev.value) <= 1e-9 * x * ev.value

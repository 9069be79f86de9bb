from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from critforge.cylinder_series import (
    CylinderSpec,
    coefficients,
    eval_u,
    gradient_on_cylinder_sphere,
    grad_ustar,
    hessian_at_origin,
    lambda_sweep,
    write_lambda_csv,
)
from critforge.errors import DomainError

# radial curvature at the centre, direct 40-digit mpmath summation of the
# termwise-differentiated series with K=200, a=1
LAMBDA_ORACLE = {
    1.0: 1.135521974981919003,
    2.0: 0.71009062879913454768,
    4.0: 0.074988678629513410935,
    8.0: 0.00061547020820961056907,
}
# u at (r, z) = (0.5, 0.3), H=4, a=1, same oracle
U_ORACLE = 1.9777372911519285199


@pytest.fixture(scope="module")
def series4():
    return coefficients(CylinderSpec(4.0, 1.0, 200))


def test_value_against_oracle(series4):
    assert eval_u(series4, 0.5, 0.3) == pytest.approx(U_ORACLE, abs=1e-13)


@pytest.mark.parametrize("H", sorted(LAMBDA_ORACLE))
def test_lambda_against_oracle(H):
    rep = hessian_at_origin(coefficients(CylinderSpec(H, 1.0, 200)))
    assert rep.lam == pytest.approx(LAMBDA_ORACLE[H], rel=1e-12)
    assert rep.saddle_confirmed


def test_ends_take_lower_value(series4):
    z = np.full(7, 2.0)
    r = np.linspace(0.0, 0.95, 7)
    np.testing.assert_allclose(eval_u(series4, r, z), 1.0, atol=1e-14)
    np.testing.assert_allclose(eval_u(series4, r, -z), 1.0, atol=1e-14)


def test_lateral_value_improves_with_truncation():
    errs = []
    for K in (25, 50, 100, 200):
        s = coefficients(CylinderSpec(4.0, 1.0, K))
        z = np.linspace(-1.8, 1.8, 37)
        errs.append(float(np.max(np.abs(eval_u(s, np.ones_like(z), z) - 2.0))))
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 2e-2


def test_truncation_bound_reported(series4):
    v, bound = eval_u(series4, 0.3, 0.1, with_bound=True)
    assert 0 <= bound < 1e-12
    assert 1 < v < 2


def test_centre_inside_data_range(series4):
    assert 1.0 < eval_u(series4, 0.0, 0.0) < 2.0


def test_outside_rejected(series4):
    with pytest.raises(DomainError):
        eval_u(series4, 1.2, 0.0)
    with pytest.raises(DomainError):
        eval_u(series4, 0.2, 2.5)


@pytest.mark.parametrize("bad", [dict(H=0.0), dict(a=-1.0), dict(K=0), dict(K=2.5)])
def test_bad_spec(bad):
    with pytest.raises(DomainError):
        CylinderSpec(**bad)


def _laplacian_residual(series, h):
    H, a = series.spec.H, series.spec.a
    r = np.arange(0.1, 0.9 * a + 1e-12, h)
    z = np.arange(-0.9 * H / 2, 0.9 * H / 2 + 1e-12, h)
    R, Z = np.meshgrid(r, z, indexing="ij")
    u = eval_u(series, R, Z)
    up_r, dn_r = eval_u(series, R + h, Z), eval_u(series, R - h, Z)
    up_z, dn_z = eval_u(series, R, Z + h), eval_u(series, R, Z - h)
    lap = (up_r - 2 * u + dn_r) / h**2 + (up_r - dn_r) / (2 * h * R) + (up_z - 2 * u + dn_z) / h**2
    return float(np.max(np.abs(lap)))


def test_discrete_harmonicity_second_order(series4):
    # coarser steps are pre-asymptotic: modes with w*h ~ 1 still dominate near r = 0.9a
    coarse = _laplacian_residual(series4, 0.025)
    fine = _laplacian_residual(series4, 0.0125)
    assert 3.5 <= coarse / fine <= 4.5


def test_trace_residual_small_across_heights():
    for H in np.linspace(1.0, 10.0, 10):
        rep = hessian_at_origin(coefficients(CylinderSpec(float(H), 1.0, 200)))
        assert rep.trace_residual <= 1e-8
        assert rep.lam > 0


@given(st.floats(1.0, 6.0), st.floats(0.5, 2.0))
def test_harmonic_scaling(H, a):
    lam = hessian_at_origin(coefficients(CylinderSpec(H, a, 200))).lam
    lam2 = hessian_at_origin(coefficients(CylinderSpec(2 * H, 2 * a, 200))).lam
    assert lam2 == pytest.approx(lam / 4, rel=1e-10)


def test_sweep_matches_single_row_and_decreases():
    rows = lambda_sweep([1, 2, 4, 8], 1.0, 200)
    assert [r.H for r in rows] == [1.0, 2.0, 4.0, 8.0]
    lams = [r.lam for r in rows]
    assert all(b < a for a, b in zip(lams, lams[1:]))
    assert rows[2].lam == hessian_at_origin(coefficients(CylinderSpec(4.0, 1.0, 200))).lam
    assert lambda_sweep([], 1.0) == []


def test_sweep_csv(tmp_path):
    p = write_lambda_csv(lambda_sweep([1, 2], 1.0), tmp_path / "l.csv")
    raw = p.read_bytes()
    assert raw.startswith(b"H,a,K,lambda,trace_residual\r\n")
    assert raw.count(b"\r\n") == 3


@given(st.floats(-0.9, 0.9), st.floats(0.0, 0.9))
def test_gradient_matches_finite_difference(x1, rho):
    s = coefficients(CylinderSpec(4.0, 1.0, 200))
    p = np.array([x1, rho * 0.6, rho * 0.8])
    g = grad_ustar(s, p)[0]
    step = 1e-5

    def u(q):
        return eval_u(s, np.hypot(q[1], q[2]), q[0])

    fd = [(u(p + step * e) - u(p - step * e)) / (2 * step) for e in np.eye(3)]
    np.testing.assert_allclose(g, fd, atol=1e-7)


def test_sphere_gradient_positive_and_even(series4):
    sg = gradient_on_cylinder_sphere(series4, 0.5, 500)
    assert sg.minimum > 0
    flipped = grad_ustar(series4, -sg.points)
    np.testing.assert_allclose(flipped, -sg.gradients, atol=1e-12)


def test_axis_points_follow_taylor(series4):
    lam = hessian_at_origin(series4).lam
    r = 0.02
    pts = np.array([[r, 0, 0], [0, r, 0], [0, 0, r]])
    g = grad_ustar(series4, pts)
    dots = np.array([-g[0, 0], g[1, 1], g[2, 2]]) / r
    np.testing.assert_allclose(dots, [2 * lam, lam, lam], rtol=5e-3)


def test_sphere_must_fit(series4):
    with pytest.raises(DomainError):
        gradient_on_cylinder_sphere(series4, 1.5)

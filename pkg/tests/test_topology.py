from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from critforge.cylinder_series import CylinderSpec, coefficients, eval_u, grad_ustar, gradient_on_cylinder_sphere
from critforge.errors import DomainError, PreconditionError
from critforge.grid import Grid3, ScalarField
from critforge.topology import (
    REFLECTION,
    SphereProbe,
    brouwer_degree,
    certify,
    degree_sum,
    gradient_sampler,
    icosphere,
    locate_zero,
    sample_gradient,
    sign_condition,
)


def linear(M, c=(0.0, 0.0, 0.0)):
    M = np.asarray(M, float)
    return lambda p: (np.atleast_2d(p) - np.asarray(c)) @ M.T


def field_on_grid(fn, n=40, lo=-1.0, hi=1.0):
    g = Grid3.cube(lo, hi, n)
    X, Y, Z = g.cell_centers()
    return ScalarField(g, fn(X, Y, Z))


def test_icosphere_counts_and_orientation():
    v, t = icosphere(4)
    assert v.shape == (2562, 3) and t.shape == (5120, 3)
    np.testing.assert_allclose(np.linalg.norm(v, axis=1), 1.0, atol=1e-15)
    a, b, c = (v[t[:, k]] for k in range(3))
    outward = np.einsum("ij,ij->i", np.cross(b - a, c - a), a + b + c)
    assert np.all(outward > 0)


def test_surface_area_close_to_sphere():
    probe = SphereProbe((0, 0, 0), 2.0, 4)
    assert probe.surface_area() / (4 * np.pi * 4.0) == pytest.approx(1.0, abs=2e-3)


@pytest.mark.parametrize("M, want", [(np.eye(3), 1), (np.diag([-1.0, 1, 1]), -1), (np.diag([2.0, 1, 1]), 1)])
@pytest.mark.parametrize("scale", [1e-6, 1.0, 1e6])
def test_linear_field_degrees(M, want, scale):
    probe = SphereProbe((0.1, -0.2, 0.3), 0.5)
    samples = scale * linear(M, probe.center)(probe.vertices)
    assert brouwer_degree(samples, probe) == want
    assert round(degree_sum(samples, probe)) == want


@given(st.lists(st.floats(-3, 3), min_size=9, max_size=9), st.integers(2, 3))
def test_degree_is_sign_of_determinant(entries, level):
    M = np.array(entries).reshape(3, 3)
    det = np.linalg.det(M)
    assume(abs(det) > 1e-2 and np.linalg.cond(M) < 1e3)
    coarse, fine = SphereProbe((0, 0, 0), 1.0, level), SphereProbe((0, 0, 0), 1.0, level + 1)
    d1 = brouwer_degree(linear(M)(coarse.vertices), coarse)
    d2 = brouwer_degree(linear(M)(fine.vertices), fine)
    assert d1 == d2 == int(np.sign(det))


def test_constant_field_has_no_certified_zero():
    probe = SphereProbe((0, 0, 0), 1.0)
    samples = np.tile([0.3, -1.0, 2.0], (len(probe.normals), 1))
    assert degree_sum(samples, probe) == 0.0
    assert brouwer_degree(samples, probe) == 0
    assert sign_condition(samples, probe, np.eye(3)) <= 0
    const = lambda p: np.tile([0.3, -1.0, 2.0], (len(np.atleast_2d(p)), 1))  # noqa: E731
    with pytest.raises(PreconditionError):
        locate_zero(const, probe, 1e-3)
    rep = certify(const, probe, np.eye(3))
    assert rep.degree == 0 and rep.zero_point is None


def test_vanishing_sample_is_precondition():
    probe = SphereProbe((0, 0, 0), 1.0, 2)
    s = probe.normals.copy()
    s[5] = 0.0
    with pytest.raises(PreconditionError):
        degree_sum(s, probe)


def test_identity_sign_condition_equals_radius():
    probe = SphereProbe((0, 0, 0), 0.7)
    assert sign_condition(probe.vertices, probe, np.eye(3)) == pytest.approx(0.7)


def test_sampler_on_linear_and_quadratic():
    f = field_on_grid(lambda x, y, z: x)
    probe = SphereProbe((0, 0, 0), 0.5, 2)
    np.testing.assert_allclose(sample_gradient(f, probe), np.tile([1.0, 0, 0], (len(probe.normals), 1)), atol=1e-12)
    q = field_on_grid(lambda x, y, z: 0.5 * (-2 * x * x + y * y + z * z), n=80)
    got = sample_gradient(q, probe)
    want = probe.vertices @ np.diag([-2.0, 1, 1])
    assert np.max(np.abs(got - want)) <= 2 * q.grid.h


def test_sampler_refuses_edge_points():
    f = field_on_grid(lambda x, y, z: x, n=10)
    with pytest.raises(DomainError):
        gradient_sampler(f)(np.array([[0.95, 0.0, 0.0]]))


def test_sampler_matches_series_gradient():
    series = coefficients(CylinderSpec(4.0, 1.0, 200))
    g = Grid3((-1.0, -1.0, -1.0), 2.0 / 64, (64, 64, 64))
    X, Y, Z = g.cell_centers()
    r = np.minimum(np.hypot(Y, Z), 1.0)
    u = eval_u(series, r, X)
    probe = SphereProbe((0, 0, 0), 0.5, 3)
    sg = gradient_on_cylinder_sphere(series, 0.5, 10)
    exact = grad_ustar(series, probe.vertices)
    got = sample_gradient(ScalarField(g, u), probe)
    assert np.max(np.abs(got - exact)) < 5e-3
    assert sg.minimum > 0


@given(st.tuples(*[st.floats(-0.3, 0.3)] * 3))
def test_locate_saddle_zero(c):
    grad = linear(np.diag([-2.0, 1.0, 1.0]), c)
    probe = SphereProbe((0, 0, 0), 0.6, 4)
    loc = locate_zero(grad, probe, 1e-4)
    assert np.linalg.norm(np.asarray(loc.point) - np.asarray(c)) <= 1e-4
    assert loc.box_diameter <= 1e-4


def test_locate_requires_degree():
    probe = SphereProbe((0, 0, 0), 0.5)
    with pytest.raises(PreconditionError):
        locate_zero(field_on_grid(lambda x, y, z: x), probe, 1e-3)


def test_certify_quadratic_saddle_grid_field(tmp_path):
    f = field_on_grid(lambda x, y, z: 0.5 * (-2 * (x - 0.05) ** 2 + y * y + z * z), n=48)
    probe = SphereProbe((0, 0, 0), 0.4)
    rep = certify(f, probe, REFLECTION, f.grid.h / 32)
    assert rep.min_normal_dot > 0
    assert rep.degree == 1
    assert abs(rep.zero_point[0] - 0.05) < f.grid.h
    assert rep.zero_gradient_norm <= 0.01 * rep.max_field_norm_on_sphere
    assert certify(f, probe.scaled(0.8), REFLECTION).degree == 1
    d = json.loads(rep.to_json(tmp_path / "r.json"))
    assert d["degree"] == 1 and (tmp_path / "r.json").exists()


@given(st.lists(st.floats(-1, 1), min_size=9, max_size=9))
def test_positive_sign_condition_implies_degree_one(entries):
    M = np.eye(3) * 2 + 0.4 * np.array(entries).reshape(3, 3)
    probe = SphereProbe((0, 0, 0), 1.0, 3)
    s = linear(M)(probe.vertices)
    if sign_condition(s, probe, np.eye(3)) > 0:
        assert brouwer_degree(s, probe) == 1


def test_bad_probe():
    with pytest.raises(DomainError):
        SphereProbe((0, 0, 0), 0.0)
    probe = SphereProbe((0, 0, 0), 1.0, 1)
    with pytest.raises(DomainError):
        sign_condition(np.zeros((3, 3)), probe)

from __future__ import annotations

import numpy as np
import pytest

from critforge.cascade import dirichlet_expansion, dirichlet_limit, neumann_expansion, neumann_limit
from critforge.errors import PreconditionError
from critforge.experiments import fit_slope
from critforge.geometry import D1, D2, BoundaryData, build_masks, conductivity, reference_domain
from critforge.grid import Faces
from critforge.solver import BoundaryCondition, solve

TOL = 1e-11


@pytest.fixture(scope="module")
def ref():
    spec = reference_domain()
    return build_masks(spec, spec.grid(24))


@pytest.fixture(scope="module")
def bridged():
    spec = reference_domain(slab_axis=1, bridge=0.4, slab_half_height=1.6)
    return build_masks(spec, spec.grid(32))


@pytest.fixture(scope="module")
def two_level(ref):
    g = BoundaryData("1.5 + 0.1*x*z", {"D1": 1.0, "D2": 2.0}).face_values(ref)
    return g, dirichlet_expansion(ref, g, 2, TOL)


def test_constant_data_constant_terms(ref):
    g = BoundaryData("3.0").face_values(ref)
    res = dirichlet_expansion(ref, g, 1, TOL)
    np.testing.assert_allclose(res.terms[0], 3.0, atol=1e-8)
    np.testing.assert_allclose(res.terms[1], 0.0, atol=1e-7)


def test_limit_constant_on_handles(ref, two_level):
    _, res = two_level
    u0 = res.terms[0]
    np.testing.assert_allclose(u0[ref.handle(1)], 1.0, atol=1e-8)
    np.testing.assert_allclose(u0[ref.handle(2)], 2.0, atol=1e-8)


def test_limit_bounded_by_patch_data(ref):
    g = BoundaryData("1.5 + 0.2*sin(x+2*y) + 0.1*z").face_values(ref)
    u0 = dirichlet_limit(ref, g, TOL).terms[0]
    for role in (1, 2):
        vals = np.concatenate([a[m] for a, m in zip(g, ref.dirichlet_patch(role))])
        cells = u0[ref.handle(role)]
        assert cells.min() >= vals.min() - 1e-9
        assert cells.max() <= vals.max() + 1e-9


def test_order_zero_expansion_is_the_limit(ref, two_level):
    g, res = two_level
    lim = dirichlet_limit(ref, g, TOL)
    np.testing.assert_array_equal(lim.terms[0], res.terms[0])
    assert dirichlet_expansion(ref, g, 0, TOL).order_N == 0


def test_growth_ratios_bounded(two_level):
    _, res = two_level
    assert all(0 < r < 50 for r in res.growth_ratios())


def test_partial_sums_against_direct_solves(ref, two_level):
    g, res = two_level
    core = ref.core()
    bc = BoundaryCondition.dirichlet_data(ref.grid, g)
    etas = [1e-1, 3e-2, 1e-2]
    e0, e1, spread = [], [], []
    for eta in etas:
        u = solve(ref.grid, conductivity(ref, eta), bc, tol=TOL).field.values
        e0.append(np.abs(u - res.evaluate(eta, 0))[core].max())
        e1.append(np.abs(u - res.evaluate(eta, 1))[core].max())
        spread.append(np.ptp(u[ref.handle(2)]))
    assert all(b < a for a, b in zip(e0, e0[1:]))
    assert 1.6 <= fit_slope(etas, e1)["slope"] <= 2.4
    assert all(b < a for a, b in zip(spread, spread[1:]))


def test_evaluate_rejects_excess_order(two_level):
    with pytest.raises(PreconditionError):
        two_level[1].evaluate(0.1, 5)


def test_outputs(tmp_path, two_level):
    _, res = two_level
    raw = res.write_csv(tmp_path / "c.csv").read_bytes()
    assert raw.startswith(b"n,region,norm_L2,norm_max\r\n")
    assert res.write_json(tmp_path / "c.json").read_text().startswith("{")


FLUX = BoundaryData("0.1*(1+z/3)", {"D1": 1.0, "D2": "balance"})


@pytest.fixture(scope="module")
def flux_expansion(bridged):
    g = FLUX.face_values(bridged)
    return g, neumann_expansion(bridged, g, 1, TOL)


def test_neumann_constants(bridged, flux_expansion):
    _, res = flux_expansion
    c = res.constants
    assert c["beta1"] == 0.0
    assert c["beta2"] != 0.0
    assert c["a"][0] == c["beta2"]
    assert abs(c["alpha"]) > 0
    assert max(abs(r) for r in c["compat_residuals"]) < 1e-6
    u0 = res.terms[0]
    np.testing.assert_allclose(u0[bridged.handle(1)], 0.0, atol=1e-12)
    np.testing.assert_allclose(u0[bridged.handle(2)], c["beta2"], atol=1e-12)


def test_auxiliary_potential_in_unit_range(bridged, flux_expansion):
    v = flux_expansion[1].v.field.values[bridged.plus]
    assert v.min() >= -1e-10 and v.max() <= 1 + 1e-10


def test_neumann_limit_matches_order_zero(bridged, flux_expansion):
    g, res = flux_expansion
    lim = neumann_limit(bridged, g, TOL)
    assert lim.constants["beta2"] == pytest.approx(res.constants["beta2"], rel=1e-9)
    np.testing.assert_allclose(lim.terms[0], res.terms[0], atol=1e-8)


def test_zero_flux_gives_zero(bridged):
    g = Faces.zeros(bridged.grid)
    lim = neumann_limit(bridged, g, TOL)
    assert abs(lim.constants["beta2"]) < 1e-12
    np.testing.assert_allclose(lim.terms[0], 0.0, atol=1e-12)


def test_plateau_tracks_beta2(bridged, flux_expansion):
    g, res = flux_expansion
    anchor = tuple(res.constants["anchor1"])
    bc = BoundaryCondition.neumann_data(bridged.grid, g, (anchor, 0.0))
    etas = [1e-3, 1e-4, 1e-5]
    errs = []
    for eta in etas:
        u = solve(bridged.grid, conductivity(bridged, eta), bc, tol=TOL).field.values
        errs.append(abs(np.mean(u[bridged.handle(2)]) - u[anchor] - res.constants["beta2"]))
    assert 0.8 <= fit_slope(etas, errs)["slope"] <= 1.2


def test_disconnected_handle_refused(ref):
    g = FLUX.face_values(ref)
    with pytest.raises(PreconditionError):
        neumann_limit(ref, g, TOL)


def test_patch_sign_rule(bridged):
    g = FLUX.face_values(bridged)
    on1 = np.concatenate([a[m] for a, m in zip(g, bridged.dirichlet_patch(D1))])
    on2 = np.concatenate([a[m] for a, m in zip(g, bridged.dirichlet_patch(D2))])
    assert on1.min() > 0 and on2.max() < 0

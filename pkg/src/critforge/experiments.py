"""Named scenarios wiring geometry, solver, expansion and degree tools together.

Every scenario is described by a :class:`ScenarioConfig`.  Knobs left as
``None`` take scenario-specific defaults (see :func:`resolve`), and the fully
resolved configuration is echoed to ``manifest.json`` in the output
directory.  Outputs are CSV (header row, CRLF line endings) or UTF-8 JSON,
with no timestamps, so a rerun reproduces them byte for byte.
"""

from __future__ import annotations

import contextlib
import copy
import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .cascade import dirichlet_expansion, neumann_expansion
from .cylinder_series import lambda_sweep, write_lambda_csv
from .errors import CritforgeError, DomainError, GeometryError
from .geometry import (
    D1,
    D2,
    BoundaryData,
    DomainSpec,
    HandleSpec,
    PatchSpec,
    UnitSpec,
    build_masks,
    compile_expression,
    conductivity,
    mollify,
    reference_domain,
)
from .grid import AxisymGrid, Faces, ScalarField, write_field_binary
from .solver import AxisymBC, BoundaryCondition, axisym_origin_hessian, face_trace, solve, solve_axisym, solve_mixed
from .topology import DEFAULT_LEVEL, SphereProbe, certify

__all__ = [
    "SCENARIOS",
    "ScenarioConfig",
    "RunResult",
    "resolve",
    "validate",
    "run",
    "fit_slope",
    "axisym_lambda",
    "default_geometry",
    "multi_unit_domain",
]

log = logging.getLogger(__name__)

SCENARIOS = (
    "fig3_lambda",
    "eta_sweep_dirichlet",
    "eta_sweep_neumann",
    "pipeline_dirichlet",
    "pipeline_neumann",
    "mollify_stability",
    "shrinking_patch",
    "multi_bc",
)
NEUMANN_SCENARIOS = ("eta_sweep_neumann", "pipeline_neumann")
_PROBED = ("pipeline_dirichlet", "pipeline_neumann", "mollify_stability", "multi_bc")
# grid^2 / eta above this is beyond what the Jacobi-CG solver resolves reliably
CONDITIONING_LIMIT = 1e10

_DEFAULT_GRID = {
    "eta_sweep_dirichlet": 64,
    "eta_sweep_neumann": 48,
    "pipeline_dirichlet": 64,
    "pipeline_neumann": 64,
    "mollify_stability": 64,
    "shrinking_patch": 80,
    "multi_bc": 48,
}
_DEFAULT_ETAS = {
    "eta_sweep_dirichlet": [1e-1, 3e-2, 1e-2, 3e-3, 1e-3],
    # the flux branch couples the handles only through their constants, so its
    # expansion radius is smaller; sample well inside it
    "eta_sweep_neumann": [1e-3, 3e-4, 1e-4, 3e-5, 1e-5],
}
_DEFAULT_EPS = {
    "pipeline_dirichlet": [4, 2],
    "pipeline_neumann": [2],
    "mollify_stability": [8, 6, 4, 3, 2],
}
_DIRICHLET_DATA = {"expression": "1.5", "overrides": {"D1": 1.0, "D2": 2.0}}
_FLUX_DATA = {"expression": "0.1*(1+z/3)", "overrides": {"D1": 1.0, "D2": "balance"}}
_PATCH_DATA = {"expression": "1 + x + 0.5*y + 0.25*x*y", "overrides": {}}
_MULTI_DATA = [
    {"expression": "1.5 + 0.1*y/5.25", "overrides": {"H1": 1.0, "H2": 2.0}},
    {"expression": "1.5 - 0.1*y/5.25", "overrides": {"H3": 1.0, "H4": 2.0}},
]


@dataclass
class ScenarioConfig:
    """One scenario run.

    Attributes
    ----------
    scenario : str
        One of :data:`SCENARIOS`.
    geometry : dict, optional
        Serialized :class:`DomainSpec`; the scenario's default layout if omitted.
    grid : int, optional
        Cells along ``x``.
    eta : float
        Contrast for pipeline and multi-data runs (handle conductivity ``1/eta``).
    etas : list of float, optional
        Contrast sweep for the two sweep scenarios.
    order : int
        Expansion order ``N``.
    first_order_points : int
        Number of largest ``eta`` values used for the first-order slope fit.
    tol : float
        Relative residual tolerance of every linear solve.
    boundary : dict, optional
        ``{"expression": str, "overrides": {...}}`` boundary data.
    boundaries : list of dict, optional
        Data sets for ``multi_bc``.
    probe_radius : float, optional
        Defaults to ``0.4`` times the cylinder radius.
    probe_level : int
        Icosahedral refinement level of the probe sphere.
    locate_tol_cells : float
        Zero-location box diameter in units of the grid spacing.
    eps_factors : list of float, optional
        Mollification radii in units of the grid spacing.
    H_list, a, K, fd_points
        Cylinder sweep for ``fig3_lambda``; ``fd_points > 0`` adds an
        axisymmetric finite-difference cross-check on that many nodes per side.
    rho_list : list of float
        Patch radii for ``shrinking_patch``.
    write_fields : bool
        Write solved fields as binary blocks with JSON sidecars.
    """

    scenario: str
    geometry: dict | None = None
    grid: int | None = None
    eta: float = 1e-3
    etas: list | None = None
    order: int = 2
    first_order_points: int = 3
    tol: float = 1e-10
    boundary: dict | None = None
    boundaries: list | None = None
    probe_radius: float | None = None
    probe_level: int = DEFAULT_LEVEL
    locate_tol_cells: float = 1.0 / 32
    eps_factors: list | None = None
    H_list: list = field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0])
    a: float = 1.0
    K: int = 200
    fd_points: int = 0
    rho_list: list = field(default_factory=lambda: [0.4, 0.2, 0.1])
    write_fields: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise DomainError(f"unknown config keys: {', '.join(unknown)}")
        if "scenario" not in d:
            raise DomainError("config needs a 'scenario' entry")
        return cls(**copy.deepcopy(d))

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunResult:
    status: int
    out_dir: Path
    artifacts: list
    summary: dict


def default_geometry(scenario: str) -> DomainSpec | None:
    """Layout used when the config gives none."""
    if scenario in NEUMANN_SCENARIOS:
        # handle 1 must be connected to carry a single constant
        return reference_domain(slab_axis=1, bridge=0.4, slab_half_height=1.6)
    if scenario == "multi_bc":
        return multi_unit_domain()
    if scenario == "shrinking_patch":
        return _patch_domain(0.4)
    if scenario == "fig3_lambda":
        return None
    return reference_domain()


def multi_unit_domain(separation: float = 5.25, half_width: float = 3.0) -> DomainSpec:
    """Two reference units stacked along ``y`` in one box, handles pairwise disjoint."""
    L = half_width
    units = []
    for oy in (-separation / 2, separation / 2):
        units += list(reference_domain(half_width=L, offset=(0.0, oy, 0.0)).units)
    return DomainSpec((-L, -separation, -L), (L, separation, L), tuple(units))


def _patch_domain(rho: float) -> DomainSpec:
    """Single block handle standing on the bottom face of ``[-1, 1]^3``."""
    handle = HandleSpec(
        role=1,
        attach="none",
        thickness=0.0,
        tube_radius=0.3,
        polylines=(),
        blocks=(((-0.35, -0.35, -1.0), (0.35, 0.35, 0.2)),),
        patch=PatchSpec((0.0, 0.0, -1.0), rho),
    )
    return DomainSpec((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0), (UnitSpec(None, (handle,)),))


def resolve(config: ScenarioConfig) -> ScenarioConfig:
    """Copy of ``config`` with every scenario default filled in."""
    c = copy.deepcopy(config)
    s = c.scenario
    if c.geometry is None:
        geo = default_geometry(s)
        c.geometry = None if geo is None else geo.to_dict()
    if c.grid is None:
        c.grid = _DEFAULT_GRID.get(s)
    if c.etas is None:
        c.etas = list(_DEFAULT_ETAS.get(s, [c.eta]))
    if c.boundary is None:
        c.boundary = copy.deepcopy(
            _FLUX_DATA if s in NEUMANN_SCENARIOS else _PATCH_DATA if s == "shrinking_patch" else _DIRICHLET_DATA
        )
    if c.boundaries is None and s == "multi_bc":
        c.boundaries = copy.deepcopy(_MULTI_DATA)
    if c.eps_factors is None:
        c.eps_factors = list(_DEFAULT_EPS.get(s, []))
    if c.probe_radius is None and c.geometry is not None:
        cyls = [u["cylinder"] for u in c.geometry["units"] if u.get("cylinder")]
        if cyls:
            c.probe_radius = 0.4 * min(cy["a"] for cy in cyls)
    return c


def validate(config) -> list[str]:
    """Diagnostics for ``config`` (a :class:`ScenarioConfig` or a plain dict); empty means runnable."""
    diags: list[str] = []
    if isinstance(config, dict):
        try:
            config = ScenarioConfig.from_dict(config)
        except (DomainError, TypeError) as exc:
            return [str(exc)]
    if config.scenario not in SCENARIOS:
        return [f"unknown scenario {config.scenario!r}; expected one of {', '.join(SCENARIOS)}"]
    c = resolve(config)
    s = c.scenario
    if not 0 < c.tol < 1:
        diags.append(f"tol must lie in (0, 1), got {c.tol}")
    if c.order < 0:
        diags.append("order must be >= 0")
    if s == "fig3_lambda":
        if not c.H_list or any(not (isinstance(H, (int, float)) and H > 0) for H in c.H_list):
            diags.append("H_list must hold positive heights")
        if not c.a > 0:
            diags.append("a must be positive")
        if int(c.K) != c.K or c.K < 1:
            diags.append("K must be a positive integer")
        return diags
    if c.grid is None or int(c.grid) != c.grid or c.grid < 8:
        diags.append(f"grid must be an integer >= 8, got {c.grid}")
        return diags
    etas = list(c.etas) + [c.eta]
    if any(not (isinstance(e, (int, float)) and 0 < e <= 1) for e in etas):
        diags.append("every eta must lie in (0, 1]")
    else:
        worst = min(etas)
        if c.grid**2 / worst > CONDITIONING_LIMIT:
            diags.append(
                f"eta={worst:g} at {c.grid}^3 exceeds the conditioning bound grid^2/eta <= {CONDITIONING_LIMIT:g}; "
                f"the iterative solver cannot resolve this contrast reliably"
            )
    if s.startswith("eta_sweep") and len(set(c.etas)) < 2:
        diags.append("a sweep needs at least two distinct eta values")
    if s == "eta_sweep_dirichlet" and not 2 <= c.first_order_points <= len(c.etas):
        diags.append("first_order_points must lie between 2 and the number of eta values")
    if any(not e >= 2 for e in c.eps_factors):
        diags.append("mollification radii must be at least 2 grid cells")
    if s == "shrinking_patch" and (not c.rho_list or any(not r > 0 for r in c.rho_list)):
        diags.append("rho_list must hold positive radii")
    data_sets = c.boundaries if s == "multi_bc" else [c.boundary]
    bad_data = False
    for bd in data_sets or []:
        try:
            compile_expression(bd.get("expression", "0"))
        except (DomainError, SyntaxError) as exc:
            bad_data = True
            diags.append(f"boundary expression: {exc}")
    try:
        spec = DomainSpec.from_dict(c.geometry)
        grid = spec.grid(int(c.grid))
        masks = build_masks(spec, grid)
    except (GeometryError, DomainError, KeyError, TypeError, ValueError) as exc:
        diags.append(f"geometry infeasible: {exc}")
        return diags
    diags += masks.issues.get("clearance", [])
    if s in NEUMANN_SCENARIOS:
        diags += [f"{msg}; flux data need connected handles" for msg in masks.issues.get("components", [])]
    for bd in [] if bad_data else data_sets or []:
        try:
            BoundaryData(bd.get("expression", "0"), bd.get("overrides", {})).face_values(masks)
        except (DomainError, GeometryError) as exc:
            diags.append(f"boundary data: {exc}")
    if s in _PROBED:
        if not masks.cylinders:
            diags.append("the scenario needs a cylinder to probe")
        elif c.probe_radius is not None:
            for unit in spec.units:
                cyl = unit.cylinder
                if cyl is not None and not c.probe_radius + 2 * grid.h < min(cyl.a, cyl.H / 2):
                    diags.append(f"probe radius {c.probe_radius} does not fit inside the cylinder with a 2-cell margin")
                    break
    return diags


def fit_slope(etas, errors) -> dict:
    """Least-squares log-log slope plus the slope of every consecutive interval."""
    x = np.log(np.asarray(etas, dtype=float))
    y = np.log(np.asarray(errors, dtype=float))
    slope = float(np.polyfit(x, y, 1)[0]) if len(x) >= 2 else math.nan
    ratios = [float((y[i + 1] - y[i]) / (x[i + 1] - x[i])) for i in range(len(x) - 1)]
    return {"slope": slope, "interval_slopes": ratios}


def axisym_lambda(H: float, a: float, points: int = 513, tol: float = 1e-12) -> float:
    """Radial second derivative of the two-level cylinder solution at the centre, by finite differences.

    Ends carry 1 and the lateral surface 2; the corner nodes take the end value.
    """
    grid2 = AxisymGrid(a, -H / 2, H / 2, points, points)
    bc = AxisymBC.from_function(grid2, lambda r, z: np.where(np.abs(z) >= H / 2 - 1e-12, 1.0, 2.0))
    d2r, _ = axisym_origin_hessian(solve_axisym(grid2, bc, tol))
    return float(d2r)


class _Run:
    """Output directory bookkeeping and stage labelling for one scenario."""

    def __init__(self, out_dir: Path):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts: list[str] = []
        self.summary: dict[str, Any] = {}
        self.failed: str | None = None

    def path(self, name: str) -> Path:
        self.artifacts.append(name)
        return self.out / name

    def csv(self, name, header, rows):
        with self.path(name).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])

    def json(self, name, payload):
        self.path(name).write_text(json.dumps(_plain(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @contextlib.contextmanager
    def stage(self, name):
        try:
            yield
        except CritforgeError as exc:
            self.failed = name
            self.summary["failed_stage"] = name
            self.summary["error"] = f"{type(exc).__name__}: {exc}"
            log.error("stage %s failed: %s", name, exc)
            raise _StageFailed(name) from exc


class _StageFailed(Exception):
    pass


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def run(config: ScenarioConfig, out_dir) -> RunResult:
    """Run one scenario and write its artifacts to ``out_dir``.

    Returns a :class:`RunResult` with ``status`` 0 on success, 1 when a stage
    failed (artifacts written so far are kept and the summary names the
    stage), and 2 when the config does not validate (nothing is written).
    """
    diags = validate(config)
    if diags:
        return RunResult(2, Path(out_dir), [], {"diagnostics": diags})
    c = resolve(config)
    r = _Run(out_dir)
    r.json("manifest.json", {"config": c.to_dict()})
    status = 0
    try:
        _RUNNERS[c.scenario](c, r)
    except _StageFailed:
        status = 1
    r.summary["status"] = status
    r.json("summary.json", r.summary)
    return RunResult(status, r.out, list(r.artifacts), r.summary)


# ---------------------------------------------------------------- scenarios


def _masks_for(c):
    spec = DomainSpec.from_dict(c.geometry)
    grid = spec.grid(int(c.grid))
    return spec, grid, build_masks(spec, grid)


def _data(bd):
    return BoundaryData(bd.get("expression", "0"), dict(bd.get("overrides", {})))


def _patch_mean(g: Faces, patch: Faces) -> float:
    return g.sum(patch) / max(patch.count(), 1)


def _reflection(axis: int, sign: float) -> np.ndarray:
    R = np.eye(3)
    R[axis, axis] = -1.0
    return (1.0 if sign >= 0 else -1.0) * R


def _report_row(stage, eps_cells, h, rep, base, iterations):
    zp = rep.zero_point or (math.nan,) * 3
    ratio = rep.min_normal_dot / base if base else math.nan
    return [stage, eps_cells, eps_cells * h, rep.min_normal_dot, ratio, rep.degree, *zp,
            math.nan if rep.zero_gradient_norm is None else rep.zero_gradient_norm,
            rep.max_field_norm_on_sphere, rep.min_field_norm_on_sphere, iterations]


_STAGE_HEADER = ["stage", "eps_cells", "eps", "min_normal_dot", "ratio_to_unmollified", "degree",
                 "zero_x", "zero_y", "zero_z", "zero_grad_norm", "max_field_norm", "min_field_norm", "iterations"]


def _certify_stages(c, r, grid, sigma, bc, probe, R, tag=""):
    """Solve at contrast ``eta``, then after each mollification, certifying every field."""
    h = grid.h
    tol = c.locate_tol_cells * h
    rows, reports = [], {}
    with r.stage(f"{tag}solve eta={c.eta:g}"):
        rep = solve(grid, sigma, bc, tol=c.tol)
    with r.stage(f"{tag}certify eta={c.eta:g}"):
        deg = certify(rep.field, probe, R, tol)
        inner = certify(rep.field, probe.scaled(0.8), R, tol)
    base = deg.min_normal_dot
    reports["eta"] = deg.to_dict() | {"degree_at_0.8r": inner.degree}
    rows.append(_report_row("eta", 0, h, deg, base, rep.iterations))
    if c.write_fields:
        for p in write_field_binary(rep.field, r.out / f"{tag}u_eta.bin"):
            r.artifacts.append(p.name)
    for k in c.eps_factors:
        name = f"mollified eps={k:g}h"
        with r.stage(f"{tag}{name}"):
            smooth = mollify(sigma, k * h)
            rk = solve(grid, smooth, bc, tol=c.tol, x0=rep.field.values)
            dk = certify(rk.field, probe, R, tol)
        reports[name] = dk.to_dict()
        rows.append(_report_row(name, k, h, dk, base, rk.iterations))
    return rows, reports


def _run_fig3(c, r):
    with r.stage("lambda sweep"):
        rows = lambda_sweep(c.H_list, c.a, int(c.K))
    write_lambda_csv(rows, r.path("lambda.csv"))
    lams = [row.lam for row in rows]
    r.summary["lambda"] = lams
    r.summary["strictly_decreasing"] = bool(all(b < a for a, b in zip(lams, lams[1:])))
    if c.fd_points:
        out = []
        for row in rows:
            with r.stage(f"finite-difference check H={row.H:g}"):
                fd = axisym_lambda(row.H, row.a, int(c.fd_points))
            out.append([row.H, row.a, row.lam, fd, abs(fd - row.lam) / abs(row.lam)])
        r.csv("lambda_fd_check.csv", ["H", "a", "lambda_series", "lambda_fd", "rel_diff"], out)
        r.summary["fd_max_rel_diff"] = max(o[-1] for o in out)


def _run_sweep_dirichlet(c, r):
    spec, grid, masks = _masks_for(c)
    g = _data(c.boundary).face_values(masks)
    order = max(int(c.order), 1)
    with r.stage("expansion"):
        cr = dirichlet_expansion(masks, g, order, c.tol)
    cr.write_csv(r.path("cascade_norms.csv"))
    core = masks.core()
    bc = BoundaryCondition.dirichlet_data(grid, g)
    h3 = grid.h**3
    rows, e0, e1 = [], [], []
    for eta in c.etas:
        with r.stage(f"direct solve eta={eta:g}"):
            rep = solve(grid, conductivity(masks, eta), bc, tol=c.tol)
        u = rep.field.values
        d0 = np.abs(u - cr.evaluate(eta, 0))[core]
        d1 = np.abs(u - cr.evaluate(eta, 1))[core]
        e0.append(float(d0.max()))
        e1.append(float(d1.max()))
        rows.append([eta, e0[-1], e1[-1], math.sqrt(h3 * float(np.sum(d0 * d0))), rep.iterations])
    r.csv("eta_sweep.csv", ["eta", "err_order0_max", "err_order1_max", "err_order0_l2", "iterations"], rows)
    k = int(c.first_order_points)
    order_by_size = sorted(range(len(c.etas)), key=lambda i: -c.etas[i])[:k]
    top = sorted(order_by_size, key=lambda i: -c.etas[i])
    r.summary.update(
        order0=fit_slope(c.etas, e0),
        order1=fit_slope([c.etas[i] for i in top], [e1[i] for i in top]),
        growth_ratios=cr.growth_ratios(),
        core_cells=int(core.sum()),
        geometry_notes=masks.report,
    )


def _run_sweep_neumann(c, r):
    spec, grid, masks = _masks_for(c)
    g = _data(c.boundary).face_values(masks)
    with r.stage("expansion"):
        cr = neumann_expansion(masks, g, max(int(c.order), 1), c.tol)
    cr.write_csv(r.path("cascade_norms.csv"))
    plus = masks.plus
    v = cr.v.field.values[plus]
    beta2 = cr.constants["beta2"]
    anchor = tuple(cr.constants["anchor1"])
    h2 = masks.handle(D2)
    core = masks.core()
    bc = BoundaryCondition.neumann_data(grid, g, (anchor, 0.0))
    rows, eb, e0 = [], [], []
    for eta in c.etas:
        with r.stage(f"direct solve eta={eta:g}"):
            rep = solve(grid, conductivity(masks, eta), bc, tol=c.tol)
        u = rep.field.values
        plateau = float(np.mean(u[h2])) - float(u[anchor])
        eb.append(abs(plateau - beta2))
        e0.append(float(np.abs(u - cr.evaluate(eta, 0))[core].max()))
        rows.append([eta, plateau, eb[-1], e0[-1], rep.iterations])
    r.csv("eta_sweep.csv", ["eta", "beta2_direct", "beta2_err", "err_order0_max", "iterations"], rows)
    r.summary.update(
        beta1=cr.constants["beta1"],
        beta2=beta2,
        alpha=cr.constants["alpha"],
        a=cr.constants["a"],
        compat_residuals=cr.constants["compat_residuals"],
        v_min=float(v.min()),
        v_max=float(v.max()),
        beta2_fit=fit_slope(c.etas, eb),
        order0=fit_slope(c.etas, e0),
    )


def _probe_for(spec, unit, c):
    cyl = spec.units[unit].cylinder
    return cyl, SphereProbe(cyl.center, float(c.probe_radius), int(c.probe_level))


def _run_pipeline_dirichlet(c, r, eps_only=False):
    spec, grid, masks = _masks_for(c)
    g = _data(c.boundary).face_values(masks)
    cyl, probe = _probe_for(spec, 0, c)
    drop = _patch_mean(g, masks.dirichlet_patch(D2)) - _patch_mean(g, masks.dirichlet_patch(D1))
    R = _reflection(cyl.axis, drop)
    r.summary["reflection"] = np.diag(R).tolist()
    if not eps_only:
        with r.stage("limit"):
            lim = dirichlet_expansion(masks, g, 0, c.tol)
            u0 = np.where(np.isnan(lim.terms[0]), 0.0, lim.terms[0])
            d0 = certify(ScalarField(grid, u0), probe, R, c.locate_tol_cells * grid.h)
        r.summary["limit"] = d0.to_dict()
    sigma = conductivity(masks, c.eta)
    bc = BoundaryCondition.dirichlet_data(grid, g)
    rows, reports = _certify_stages(c, r, grid, sigma, bc, probe, R)
    r.csv("stages.csv", _STAGE_HEADER, rows)
    r.json("degree_reports.json", reports)
    r.summary["stages"] = {row[0]: {"min_normal_dot": row[3], "ratio": row[4], "degree": row[5]} for row in rows}


def _run_mollify(c, r):
    _run_pipeline_dirichlet(c, r, eps_only=True)
    held = [k for k in c.eps_factors
            if r.summary["stages"][f"mollified eps={k:g}h"]["min_normal_dot"] > 0
            and r.summary["stages"][f"mollified eps={k:g}h"]["degree"] == 1]
    # largest radius, in grid cells, at which the sign condition still holds
    r.summary["largest_eps_cells_certified"] = max(held) if held else None


def _run_pipeline_neumann(c, r):
    spec, grid, masks = _masks_for(c)
    g = _data(c.boundary).face_values(masks)
    p1, p2 = masks.dirichlet_patch(D1), masks.dirichlet_patch(D2)
    g1 = np.concatenate([a[m] for a, m in zip(g, p1)])
    g2 = np.concatenate([a[m] for a, m in zip(g, p2)])
    r.summary["patch_rule"] = {"min_flux_on_D1": float(g1.min()), "max_flux_on_D2": float(g2.max()),
                               "satisfied": bool(g1.min() > 0 and g2.max() < 0)}
    with r.stage("limit"):
        lim = neumann_expansion(masks, g, 0, c.tol)
    beta1, beta2 = lim.constants["beta1"], lim.constants["beta2"]
    alpha = lim.constants["alpha"]
    # alpha * beta2 = -(flux through D1 + Green term); nonzero iff beta2 != beta1
    r.summary.update(beta1=beta1, beta2=beta2, alpha=alpha, nonzero_condition=-alpha * beta2)
    cyl, probe = _probe_for(spec, 0, c)
    R = _reflection(cyl.axis, beta2 - beta1)
    r.summary["reflection"] = np.diag(R).tolist()
    anchor = tuple(lim.constants["anchor1"])
    bc = BoundaryCondition.neumann_data(grid, g, (anchor, 0.0))
    rows, reports = _certify_stages(c, r, grid, conductivity(masks, c.eta), bc, probe, R)
    r.csv("stages.csv", _STAGE_HEADER, rows)
    r.json("degree_reports.json", reports)
    r.summary["stages"] = {row[0]: {"min_normal_dot": row[3], "ratio": row[4], "degree": row[5]} for row in rows}


def _run_shrinking_patch(c, r):
    base = DomainSpec.from_dict(c.geometry)
    hs = base.handles()[0]
    x0 = np.asarray(hs.patch.point)
    fn = compile_expression(c.boundary.get("expression", "0"))
    g0 = float(fn(*(np.array([v]) for v in x0), base.lower, base.upper)[0])
    rows = []
    for rho in c.rho_list:
        shrunk = HandleSpec(hs.role, hs.attach, hs.thickness, hs.tube_radius, hs.polylines,
                            PatchSpec(hs.patch.point, rho), hs.blocks, hs.inset)
        spec = DomainSpec(base.lower, base.upper, (UnitSpec(None, (shrunk,)),))
        grid = spec.grid(int(c.grid))
        with r.stage(f"patch rho={rho:g}"):
            masks = build_masks(spec, grid)
            g = _data(c.boundary).face_values(masks)
            region = masks.handle_by_id(1)
            patch = masks.patch_of_handle(1)
            rep = solve_mixed(grid, region, (patch, g), None, c.tol)
        inner = masks.interface_of_handle(1)
        tr = face_trace(rep)
        dev = max(float(np.max(np.abs(t[m] - g0))) for t, m in zip(tr, inner) if m.any())
        rows.append([rho, dev, patch.count(), inner.count(), rep.iterations])
    r.csv("shrinking_patch.csv", ["rho", "sup_deviation", "patch_faces", "inner_faces", "iterations"], rows)
    devs = [row[1] for row in rows]
    order = sorted(range(len(rows)), key=lambda i: -c.rho_list[i])
    r.summary.update(
        g_at_x0=g0,
        sup_deviation=devs,
        strictly_decreasing=bool(all(devs[b] < devs[a] for a, b in zip(order, order[1:]))),
    )


def _run_multi_bc(c, r):
    spec, grid, masks = _masks_for(c)
    sigma = conductivity(masks, c.eta)
    rows, reports = [], {}
    n_units = len(spec.units)
    hid = 0
    unit_handles = []
    for unit in spec.units:
        ids = []
        for hs in unit.handles:
            hid += 1
            ids.append((hid, hs.role))
        unit_handles.append(ids)
    for l, bd in enumerate(c.boundaries):
        unit = l % n_units
        g = _data(bd).face_values(masks)
        vals = {role: _patch_mean(g, masks.patch_of_handle(h)) for h, role in unit_handles[unit]}
        cyl, probe = _probe_for(spec, unit, c)
        R = _reflection(cyl.axis, vals.get(2, 0.0) - vals.get(1, 0.0))
        bc = BoundaryCondition.dirichlet_data(grid, g)
        with r.stage(f"data {l} solve"):
            rep = solve(grid, sigma, bc, tol=c.tol)
        with r.stage(f"data {l} certify"):
            deg = certify(rep.field, probe, R, c.locate_tol_cells * grid.h)
        reports[f"data_{l}"] = deg.to_dict() | {"unit": unit}
        zp = deg.zero_point or (math.nan,) * 3
        rows.append([l, unit, deg.min_normal_dot, deg.degree, *zp, rep.iterations])
    r.csv("multi_bc.csv", ["data", "unit", "min_normal_dot", "degree", "zero_x", "zero_y", "zero_z", "iterations"], rows)
    r.json("degree_reports.json", reports)
    r.summary["degrees"] = [row[3] for row in rows]
    r.summary["all_certified"] = bool(all(row[2] > 0 and row[3] == 1 for row in rows))


_RUNNERS = {
    "fig3_lambda": _run_fig3,
    "eta_sweep_dirichlet": _run_sweep_dirichlet,
    "eta_sweep_neumann": _run_sweep_neumann,
    "pipeline_dirichlet": _run_pipeline_dirichlet,
    "pipeline_neumann": _run_pipeline_neumann,
    "mollify_stability": _run_mollify,
    "shrinking_patch": _run_shrinking_patch,
    "multi_bc": _run_multi_bc,
}

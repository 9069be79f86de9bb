from __future__ import annotations

import hashlib
import json
from pathlib import Path

import pytest

import critforge.experiments as ex
from critforge.cli import main
from critforge.experiments import SCENARIOS, ScenarioConfig, fit_slope, resolve, run, validate
from critforge.geometry import DomainSpec, reference_domain

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    assert validate(json.loads(path.read_text())) == []


def test_every_scenario_has_a_config():
    assert {p.stem for p in CONFIGS.glob("*.json")} == set(SCENARIOS)


def test_unknown_scenario_writes_nothing(tmp_path):
    res = run(ScenarioConfig(scenario="nope"), tmp_path / "out")
    assert res.status == 2
    assert not (tmp_path / "out").exists()
    assert "unknown scenario" in res.summary["diagnostics"][0]


def test_unknown_key_is_a_diagnostic():
    assert "unknown config keys" in validate({"scenario": "multi_bc", "gird": 3})[0]


def test_conditioning_bound():
    diags = validate({"scenario": "pipeline_dirichlet", "eta": 1e-7, "grid": 64})
    assert any("conditioning" in d for d in diags)
    assert validate({"scenario": "pipeline_dirichlet", "eta": 1e-4, "grid": 64}) == []


def test_overlapping_geometry_diagnostic():
    spec = reference_domain().to_dict()
    # move the slab handle onto the towers of the first handle
    spec["units"][0]["handles"][1]["blocks"] = [[[1.5, -1.0, -3.0], [3.0, 1.0, 3.0]]]
    diags = validate({"scenario": "pipeline_dirichlet", "geometry": spec, "grid": 32})
    assert any("geometry infeasible" in d for d in diags)


def test_disconnected_handle_rejected_for_flux_data():
    diags = validate({"scenario": "pipeline_neumann", "geometry": reference_domain().to_dict(), "grid": 32})
    assert any("connected" in d for d in diags)


@pytest.mark.parametrize(
    "patch, fragment",
    [
        ({"eps_factors": [1.0]}, "at least 2 grid cells"),
        ({"etas": [1e-2]}, "two distinct"),
        ({"scenario": "pipeline_dirichlet", "probe_radius": 5.0}, "does not fit"),
        ({"boundary": {"expression": "import os", "overrides": {}}}, "expression"),
        ({"grid": 4}, "grid must be"),
    ],
)
def test_bad_values(patch, fragment):
    cfg = {"scenario": "eta_sweep_dirichlet", "grid": 32} | patch
    assert any(fragment in d for d in validate(cfg))


def test_resolve_fills_defaults():
    c = resolve(ScenarioConfig(scenario="pipeline_dirichlet"))
    assert c.grid == 64 and c.eps_factors == [4, 2]
    assert c.probe_radius == pytest.approx(0.44)
    assert DomainSpec.from_dict(c.geometry) == reference_domain()
    assert ScenarioConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c


def test_fit_slope_exact_power_law():
    etas = [1e-1, 1e-2, 1e-3]
    out = fit_slope(etas, [3 * e**1.5 for e in etas])
    assert out["slope"] == pytest.approx(1.5)
    assert out["interval_slopes"] == pytest.approx([1.5, 1.5])


def _digests(d: Path):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.iterdir())}


def test_runs_are_byte_reproducible(tmp_path):
    cfg = ScenarioConfig(scenario="pipeline_dirichlet", grid=24, eps_factors=[2])
    a, b = run(cfg, tmp_path / "a"), run(cfg, tmp_path / "b")
    assert a.status == b.status == 0
    assert _digests(tmp_path / "a") == _digests(tmp_path / "b")
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["config"]["eps_factors"] == [2]
    assert manifest["config"]["geometry"] is not None
    assert (tmp_path / "a" / "stages.csv").read_bytes().count(b"\r\n") == 3


def test_stage_failure_keeps_partial_artifacts(tmp_path, monkeypatch):
    cfg = ScenarioConfig(scenario="eta_sweep_dirichlet", grid=16, etas=[0.1, 0.01], first_order_points=2, order=1)
    assert run(cfg, tmp_path / "ok").status == 0
    real = ex.solve

    def capped(*args, **kw):
        # an iteration cap far too small makes the first direct solve fail
        return real(*args, **(kw | {"maxiter": 2}))

    monkeypatch.setattr(ex, "solve", capped)
    res = run(cfg, tmp_path / "fail")
    assert res.status == 1
    assert res.summary["failed_stage"] == "direct solve eta=0.1"
    assert (tmp_path / "fail" / "cascade_norms.csv").exists()
    assert json.loads((tmp_path / "fail" / "summary.json").read_text())["failed_stage"] == "direct solve eta=0.1"


def test_fig3_scenario(tmp_path):
    res = run(ScenarioConfig(scenario="fig3_lambda"), tmp_path)
    assert res.status == 0 and res.summary["strictly_decreasing"]
    assert (tmp_path / "lambda.csv").read_bytes().count(b"\r\n") == 5


def test_shrinking_patch_small(tmp_path):
    res = run(ScenarioConfig(scenario="shrinking_patch", grid=40), tmp_path)
    assert res.status == 0 and res.summary["strictly_decreasing"]


def test_cli_validate_and_fig3(tmp_path, capsys):
    assert main(["validate", str(CONFIGS / "pipeline_dirichlet.json")]) == 0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"scenario": "pipeline_dirichlet", "eta": 1e-7}))
    assert main(["validate", str(bad)]) == 1
    capsys.readouterr()
    assert main(["fig3", "--H", "1,2", "--a", "1", "--K", "50", "--out", str(tmp_path / "f.csv")]) == 0
    out = capsys.readouterr().out
    assert "H,a,lambda" in out and (tmp_path / "f.csv").exists()


def test_cli_run_with_seed_check(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"scenario": "shrinking_patch", "rho_list": [0.4, 0.2]}))
    assert main(["run", str(cfg), "--out", str(tmp_path / "o"), "--grid", "32", "--seed-check"]) == 0
    assert "byte-identical" in capsys.readouterr().out
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["config"]["grid"] == 32


def test_cli_run_invalid(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"scenario": "nope"}))
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 2

"""Prescribed boundary flux instead of boundary values.

With flux data the handles carry unknown constants.  Handle 1 is pinned to
0 and the constant on handle 2 follows from an auxiliary potential.  Its
sign decides the orientation of the saddle.  The script prints that
constant, then certifies the critical point of a direct solve.

Run with ``python3 demos/04_flux_data.py [grid]`` (default 32).
"""

from __future__ import annotations

import sys
import tempfile
from pathlib import Path

from critforge.experiments import ScenarioConfig, run

n = int(sys.argv[1]) if len(sys.argv) > 1 else 32
with tempfile.TemporaryDirectory() as tmp:
    res = run(ScenarioConfig(scenario="pipeline_neumann", grid=n), Path(tmp))

s = res.summary
print(f"flux on patch 1 >= {s['patch_rule']['min_flux_on_D1']:.3f}, on patch 2 <= {s['patch_rule']['max_flux_on_D2']:.3f}")
print(f"handle-2 constant {s['beta2']:.5f}, auxiliary flux {s['alpha']:.3f}")
print("reflection used:", s["reflection"])
for stage, st in s["stages"].items():
    print(f"{stage:18s} sign condition {st['min_normal_dot']:.4f}  degree {st['degree']:+d}")

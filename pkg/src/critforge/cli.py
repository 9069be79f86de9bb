"""Command-line entry point: ``critforge run|validate|fig3``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import tempfile
from pathlib import Path

from .cylinder_series import lambda_sweep, write_lambda_csv
from .errors import CritforgeError
from .experiments import ScenarioConfig, run, validate


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _load(path) -> ScenarioConfig:
    return ScenarioConfig.load(path)


def _digests(out_dir: Path, names) -> dict:
    return {n: hashlib.sha256((out_dir / n).read_bytes()).hexdigest() for n in sorted(set(names))}


def _cmd_run(args) -> int:
    try:
        cfg = _load(args.config)
    except (OSError, json.JSONDecodeError, CritforgeError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.grid is not None:
        cfg.grid = args.grid
    out = Path(args.out) if args.out else Path("runs") / cfg.scenario
    res = run(cfg, out)
    if res.status == 2:
        for d in res.summary["diagnostics"]:
            print(f"invalid: {d}", file=sys.stderr)
        return 2
    if res.status == 1:
        print(f"stage failed: {res.summary.get('failed_stage')}: {res.summary.get('error')}", file=sys.stderr)
    print(f"wrote {len(res.artifacts)} artifacts to {res.out_dir}")
    if args.seed_check and res.status == 0:
        with tempfile.TemporaryDirectory() as tmp:
            again = run(cfg, Path(tmp))
            first = _digests(res.out_dir, res.artifacts)
            second = _digests(Path(tmp), again.artifacts)
        differing = sorted(n for n in first.keys() | second.keys() if first.get(n) != second.get(n))
        if differing:
            print(f"seed check failed: {', '.join(differing)} differ between runs", file=sys.stderr)
            return 1
        print(f"seed check passed: {len(first)} artifacts byte-identical")
    return res.status


def _cmd_validate(args) -> int:
    try:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    diags = validate(raw)
    for d in diags:
        print(d)
    if not diags:
        print("ok")
    return 1 if diags else 0


def _cmd_fig3(args) -> int:
    try:
        rows = lambda_sweep(args.H, args.a, args.K)
    except CritforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.out:
        path = write_lambda_csv(rows, Path(args.out))
        print(f"wrote {path}")
    print("H,a,lambda")
    for row in rows:
        print(f"{row.H:g},{row.a:g},{row.lam!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="critforge", description="Interior critical points of high-contrast conductivity problems.")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="run a scenario from a JSON config")
    pr.add_argument("config")
    pr.add_argument("--out", help="output directory (default runs/<scenario>)")
    pr.add_argument("--grid", type=int, help="override the number of cells along x")
    pr.add_argument("--seed-check", action="store_true", help="rerun and require byte-identical artifacts")
    pr.set_defaults(func=_cmd_run)

    pv = sub.add_parser("validate", help="check a config without running it")
    pv.add_argument("config")
    pv.set_defaults(func=_cmd_validate)

    pf = sub.add_parser("fig3", help="curvature at the cylinder centre versus height")
    pf.add_argument("--H", type=_float_list, default=[1.0, 2.0, 4.0, 8.0])
    pf.add_argument("--a", type=float, default=1.0)
    pf.add_argument("--K", type=int, default=200)
    pf.add_argument("--out", help="also write the table to this CSV path")
    pf.set_defaults(func=_cmd_fig3)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

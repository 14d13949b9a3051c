"""Command-line entry point.

Exit codes: 0 success, 1 run failure, 2 bad configuration or arguments.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness, wsmap
from .exceptions import EmptyPreferable, InfeasibleFit, ModelHashMismatch, SchemaMismatch

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mftwbc", description="MFT-aware whole-body control experiments")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ws = sub.add_parser("wsmap", help="offline workspace maps")
    ws_sub = ws.add_subparsers(dest="action", required=True, parser_class=_Parser)
    b = ws_sub.add_parser("build", help="grid, preferable set and fitted polyhedron")
    b.add_argument("--model", default="reference", help="model YAML file or 'reference'")
    b.add_argument("--resolution", type=float, default=wsmap.DEFAULT_RESOLUTION)
    b.add_argument("--lti-min", type=float, default=0.7)
    b.add_argument("--raci-max", type=float, default=None)
    b.add_argument("--max-faces", type=int, default=6)
    b.add_argument("--r-min", type=float, default=None)
    b.add_argument("--out", required=True, help="polyhedron output file")

    run = sub.add_parser("run", help="closed-loop experiments")
    run_sub = run.add_subparsers(dest="action", required=True, parser_class=_Parser)
    w = run_sub.add_parser("walk", help="closed-loop walk")
    w.add_argument("--config", required=True)
    w.add_argument("--controller", default=None, choices=["MFT", "SA"])
    w.add_argument("--out", default=None, help="run directory base (overrides config)")
    s = run_sub.add_parser("push-sweep", help="push-recovery sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default=None, help="run directory base (overrides config)")

    r = sub.add_parser("report", help="tabulate a sweep result file")
    r.add_argument("results")
    r.add_argument("--json", action="store_true", help="also print the machine-readable table")
    return p


def _wsmap_build(args) -> int:
    try:
        model = harness.load_model(args.model)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"bad model: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.resolution <= 0 or not 0.0 <= args.lti_min <= 1.0:
        print("resolution must be positive and lti-min inside [0, 1]", file=sys.stderr)
        return EXIT_CONFIG
    try:
        wm = wsmap.build(model, resolution=args.resolution, lti_min=args.lti_min,
                         raci_max=args.raci_max, max_faces=args.max_faces, r_min=args.r_min)
    except (InfeasibleFit, EmptyPreferable) as exc:
        print(f"workspace map failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    wsmap.save_polyhedron(wm.leg_polygon, args.out)
    audit = wm.leg_polygon.meta.get("audit", {})
    print(f"wrote {args.out}: {wm.leg_polygon.n_faces} faces, "
          f"preferable cells {int(wm.field.preferable.sum())}, audit {json.dumps(audit, default=str)}")
    return EXIT_OK


def _load_spec(path: str, out: str | None) -> harness.ExperimentSpec:
    spec = harness.ExperimentSpec.load(path)
    if out is not None:
        spec = harness.ExperimentSpec.from_dict({**spec.to_dict(), "output": out})
    return spec


def _run_walk(args) -> int:
    spec = _load_spec(args.config, args.out)
    run_dir = harness.make_run_dir(spec.output, "walk")
    try:
        summary, ep = harness.run_walk(spec, args.controller, log=True)
    except harness.NumericalBlowup as exc:
        print(f"run diverged: {exc}", file=sys.stderr)
        harness.write_manifest(run_dir, spec, [], {"status": "Diverged"})
        return EXIT_FAIL
    ep.traj.write(run_dir / "trajectory.csv")
    ep.controller.write_log(run_dir / "ticks.csv")
    (run_dir / "summary.json").write_text(json.dumps(summary.to_dict(), indent=1, sort_keys=True))
    harness.write_manifest(run_dir, spec, ["trajectory.csv", "ticks.csv", "summary.json"])
    for k, v in summary.to_dict().items():
        print(f"{k:>20}: {v}")
    print(f"run directory: {run_dir}")
    return EXIT_OK


def _run_sweep(args) -> int:
    spec = _load_spec(args.config, args.out)
    run_dir = harness.make_run_dir(spec.output, "push-sweep")
    result = harness.run_push_sweep(
        spec, progress=lambda s: print(f"height {s.height:.2f} {s.controller}: I_max {s.I_max} "
                                       f"({s.wall_time:.0f} s)", flush=True))
    result.save(run_dir / "results.json")
    table = harness.report(result)
    (run_dir / "report.txt").write_text(table + "\n")
    harness.write_manifest(run_dir, spec, ["results.json", "report.txt"])
    print(table)
    print(f"run directory: {run_dir}")
    return EXIT_OK if table != "no data" else EXIT_FAIL


def _report(args) -> int:
    result = harness.SweepResult.load(args.results)
    table = harness.report(result)
    print(table)
    if args.json:
        rows = [{"height": h, "SA": result.i_max(h, "SA"), "MFT": result.i_max(h, "MFT"),
                 "increase": result.increase(h)} for h in result.heights]
        print(json.dumps(rows, indent=1))
    return EXIT_FAIL if table == "no data" else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "wsmap":
            return _wsmap_build(args)
        if args.command == "report":
            return _report(args)
        if args.action == "walk":
            return _run_walk(args)
        return _run_sweep(args)
    except (harness.ConfigError, SchemaMismatch, ModelHashMismatch) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

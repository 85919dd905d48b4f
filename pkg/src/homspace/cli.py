"""Command line entry point: homspace run | diag | dyadic | verify-all."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .dyadic import ParameterError, build_adjacent_systems, build_system, system_delta_limit, verify_system
from .harness import Scenario, ScenarioError, emit_report, run_scenario, scenario_pack
from .space_core import InvalidSpaceError, QuasimetricMeasureSpace, structure_report


def _print_rows(report, stream=sys.stdout):
    for r in report.rows:
        state = "ok" if r["pass"] == r["expected"] else "FAIL"
        print(f"{state:4s} {r['name']}  measured={r['measured']}  bound={r['bound']}", file=stream)


def cmd_run(args):
    scen = Scenario.load(args.scenario)
    report = run_scenario(scen, seed=args.seed)
    formats = [f.strip() for f in args.format.split(",") if f.strip()]
    paths = emit_report(report, formats, args.out)
    if not args.quiet:
        _print_rows(report)
    print(f"{scen.name}: {'PASS' if report.passed else 'FAIL'} ({len(report.rows)} checks) -> "
          + ", ".join(str(p) for p in paths))
    return 0 if report.passed else 1


def cmd_diag(args):
    space = QuasimetricMeasureSpace.load(args.space)
    rep = structure_report(space, alpha=args.alpha, tau=args.tau)
    doc = {"n": space.n, "A0": rep.A0, "A1": rep.A1, "min_positive_dist": rep.min_positive_dist,
           "max_dist": rep.max_dist, "doubling_violations": len(rep.doubling_violations)}
    if rep.alpha_reg is not None:
        doc["alpha_regular"] = {"alpha": rep.alpha_reg.alpha, "kappa": rep.alpha_reg.kappa}
    if rep.tau_annuli is not None:
        doc["tau_annuli"] = {"tau": rep.tau_annuli.tau, "holds": rep.tau_annuli.holds}
    print(json.dumps(doc, indent=2))
    ok = not rep.doubling_violations and (rep.tau_annuli is None or rep.tau_annuli.holds)
    return 0 if ok else 1


def cmd_dyadic(args):
    space = QuasimetricMeasureSpace.load(args.space)
    delta = args.delta or system_delta_limit(space.A0)
    sysm = build_system(space, delta, seed=args.seed, override=args.override)
    rep = verify_system(sysm)
    doc = {"delta": delta, "levels": list(sysm.levels),
           "cubes": {str(k): sysm.n_cubes(k) for k in sysm.levels},
           **{k: rep[k] for k in ("a1", "a2", "a3", "a4", "a5", "a6", "c1", "C1", "M", "C_dydbl", "A1^N")}}
    ok = rep["required_ok"]
    if args.adjacent:
        adj = build_adjacent_systems(space, args.adjacent, delta=args.delta if args.override else None,
                                     override=args.override)
        doc["adjacent"] = {"T": adj.T, "coverage": adj.coverage, "balls": adj.total_balls,
                           "C_adj": adj.C_adj, "C_target": adj.C_target,
                           "uncovered": list(adj.uncovered[:20])}
        ok = ok and adj.coverage == 1.0
    if args.dump:
        sysm.dump(args.dump)
    print(json.dumps(doc, indent=2, default=float))
    return 0 if ok else 1


def cmd_verify_all(args):
    pack = scenario_pack(args.pack) if args.pack else scenario_pack()
    failed = 0
    for scen in pack:
        report = run_scenario(scen, seed=args.seed)
        if args.out:
            emit_report(report, ("csv", "json"), args.out)
        bad = report.failures()
        failed += bool(bad)
        print(f"{'PASS' if not bad else 'FAIL'}  {scen.name}  ({len(report.rows)} checks)")
        for r in bad:
            print(f"      {r['name']}: measured={r['measured']} bound={r['bound']}")
    print(f"{len(pack) - failed}/{len(pack)} scenarios met expectations")
    return 0 if failed == 0 else 1


def build_parser():
    ap = argparse.ArgumentParser(prog="homspace", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario file")
    p.add_argument("scenario", type=Path)
    p.add_argument("--out", default=".", type=Path)
    p.add_argument("--format", default="csv,json")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("diag", help="structural constants of a space file")
    p.add_argument("space", type=Path)
    p.add_argument("--alpha", type=float)
    p.add_argument("--tau", type=float)
    p.set_defaults(func=cmd_diag)

    p = sub.add_parser("dyadic", help="build and verify dyadic systems")
    p.add_argument("space", type=Path)
    p.add_argument("--delta", type=float)
    p.add_argument("--adjacent", type=int, default=0, metavar="T")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--override", action="store_true", help="allow delta above the admissible limit")
    p.add_argument("--dump", type=Path, help="write the system as JSON")
    p.set_defaults(func=cmd_dyadic)

    p = sub.add_parser("verify-all", help="run the shipped scenario pack")
    p.add_argument("--pack", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_verify_all)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, InvalidSpaceError, ParameterError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"homspace: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

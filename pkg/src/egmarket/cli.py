"""Command-line entry point: ``egmarket {solve,sweep,certify,so,calibrate}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from egmarket.calibrate import calibrate, shape_checks
from egmarket.experiments import run_all
from egmarket.scenario_io import (
    ScenarioFileError, bundled_path, load_result, load_source, result_document, write_result,
)
from egmarket.social import solve_social_optimum
from egmarket.solver import SolverError, solve_market
from egmarket.verification import certify, proportional_fairness_check, random_feasible_allocations

log = logging.getLogger("egmarket")


def _weights(text: str | None, n: int):
    if text is None:
        return None
    w = np.array([float(t) for t in text.split(",")])
    if w.size != n:
        raise SystemExit(f"--weights needs {n} comma-separated values, got {w.size}")
    return w


def _resolve(path: str) -> Path:
    p = Path(path)
    if not p.exists() and bundled_path(path).exists():
        return bundled_path(path)
    return p


def _config(src, tol):
    cfg = src.solver_config()
    if tol is not None:
        from dataclasses import replace
        cfg = replace(cfg, kkt_tolerance=tol)
    return cfg


def _print_table(title, names, cols, rows):
    print(title)
    print("  " + "".join(f"{c:>14}" for c in [""] + cols))
    for name, row in zip(names, rows):
        print("  " + f"{name:>14}" + "".join(f"{v:14.6g}" for v in row))


def cmd_solve(args) -> int:
    src = load_source(_resolve(args.scenario))
    s = src.scenario()
    r = solve_market(s, _config(src, args.tol))
    cert = certify(s, r, args.cert_tol)
    _print_table("allocation", [a.name for a in s.agents], s.resource_names, r.allocation)
    _print_table("prices", ["price", "capacity"], s.resource_names, [r.prices, r.capacity_duals])
    for c, lam in zip(s.energy_constraints, r.energy_duals):
        print(f"energy dual {c.label}: {lam:.6g}")
    for a, u in zip(s.agents, r.utilities):
        print(f"utility {a.name}: {u:.6g}")
    print(cert.summary())
    if args.out:
        write_result(args.out, result_document(s, r, cert))
        print(f"wrote {args.out}")
    return 0 if cert.passed else 1


def cmd_so(args) -> int:
    src = load_source(_resolve(args.scenario))
    s = src.scenario()
    cfg = _config(src, args.tol)
    so = solve_social_optimum(s, _weights(args.weights, s.n_agents), cfg)
    me = solve_market(s, cfg)
    _print_table("allocation (SO)", [a.name for a in s.agents], s.resource_names, so.allocation)
    print("weights: " + ", ".join(f"{w:g}" for w in so.weights))
    for n, a in enumerate(s.agents):
        print(f"utility {a.name}: SO {so.utilities[n]:.6g}  ME {me.utilities[n]:.6g}")
    print(f"weighted total: SO {so.objective:.6g}  ME {float(so.weights @ me.utilities):.6g}")
    return 0


def cmd_certify(args) -> int:
    src = load_source(_resolve(args.scenario))
    s = src.scenario()
    r = load_result(args.result, s)
    cert = certify(s, r, args.tol)
    print(cert.summary())
    ok = cert.passed
    if args.samples:
        rng = np.random.default_rng(args.seed)
        alts = random_feasible_allocations(s, args.samples, rng, around=r.allocation)
        fr = proportional_fairness_check(s, r.allocation, alts)
        print(f"proportional fairness: {'PASS' if fr.passed else 'FAIL'} "
              f"(max weighted change {max(fr.sums, default=0.0):.3e} over {len(fr.sums)} feasible alternatives)")
        ok = ok and fr.passed
    return 0 if ok else 1


def cmd_sweep(args) -> int:
    src = load_source(_resolve(args.scenario))
    s = src.scenario()
    results, paths = run_all(src, args.out, _config(src, args.tol), _weights(args.weights, s.n_agents),
                             args.cert_tol, args.only)
    if not results:
        print("scenario has no sweeps")
        return 1
    print((Path(args.out) / "report.txt").read_text(), end="")
    for p in paths:
        print(f"wrote {p}")
    return 0 if all(r.ok for res in results for r in res.rows) else 1


def cmd_calibrate(args) -> int:
    src = load_source(_resolve(args.scenario))
    if args.check:
        rep = shape_checks(src)
        for k, v in rep.checks.items():
            print(f"{k}: {'PASS' if v else 'FAIL'}")
        return 0 if rep.passed else 1
    cand, res = calibrate(src)
    print(f"tried {res.tried} grid points")
    if not res.found:
        print("no grid point reproduces every shape check")
        return 1
    for k, v in res.values.items():
        print(f"{k} = {v:g}")
    if args.write:
        Path(args.write).write_text(yaml.safe_dump(cand.doc, sort_keys=False))
        print(f"wrote {args.write}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="egmarket", description="Market equilibrium with energy externalities.")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver settings and progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, tol_help="solver KKT tolerance"):
        sp.add_argument("scenario", help="scenario file (or name of a bundled scenario)")
        sp.add_argument("--tol", type=float, default=None, help=tol_help)

    sp = sub.add_parser("solve", help="compute the market equilibrium and certify it")
    common(sp)
    sp.add_argument("--cert-tol", type=float, default=1e-4)
    sp.add_argument("--out", help="write the result document (JSON) here")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("so", help="solve the weighted social optimum")
    common(sp)
    sp.add_argument("--weights", help="comma-separated weights (default: budgets)")
    sp.set_defaults(func=cmd_so)

    sp = sub.add_parser("certify", help="check a saved result document")
    sp.add_argument("scenario")
    sp.add_argument("result")
    sp.add_argument("--tol", type=float, default=1e-4, help="certificate tolerance")
    sp.add_argument("--seed", type=int, default=0, help="seed for the sampled fairness check")
    sp.add_argument("--samples", type=int, default=0, help="random feasible alternatives to test")
    sp.set_defaults(func=cmd_certify)

    sp = sub.add_parser("sweep", help="run the scenario's sweeps and write CSVs")
    common(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--cert-tol", type=float, default=1e-4)
    sp.add_argument("--weights", help="SO weights (default: budgets)")
    sp.add_argument("--only", action="append", help="run only this sweep (repeatable)")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("calibrate", help="search the calibration grid for shape-reproducing values")
    sp.add_argument("scenario")
    sp.add_argument("--check", action="store_true", help="only evaluate the current values")
    sp.add_argument("--write", help="write the calibrated scenario here")
    sp.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ScenarioFileError, SolverError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

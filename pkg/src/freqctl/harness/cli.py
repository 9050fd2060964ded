"""Command-line interface.

    freqctl run --scenario S [--out DIR] [--seed N] [--format csv|json-lines] [--plots]
    freqctl compare --scenario S [--out DIR] [--controllers none,vsm,mipc]
    freqctl tune-vsm --scenario S [--out DIR]
    freqctl validate-case CASE
    freqctl emit-matrices --case CASE --horizon N [--control-period H] --out DIR

Exit status: 0 on success, 1 for domain errors (bad files, failed runs),
2 for usage errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from ..errors import CaseFormatError, FreqCtlError
from .case import load_case
from .runner import compare, run_scenario, tune_vsm
from .scenario import CONTROLLERS, load_scenario


def _scenario(args):
    spec = load_scenario(args.scenario)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    if getattr(args, "controller", None):
        spec = spec.with_controller(args.controller)
    return spec


def cmd_run(args) -> int:
    spec = _scenario(args)
    result = run_scenario(spec, out_dir=args.out, fmt=args.format, plots=args.plots)
    m = result.metrics
    print(f"{spec.name} [{spec.controller}] objective={m.objective:.6g} nadir={m.nadir:.6g} "
          f"max_rocof={m.max_rocof:.6g} settling={m.settling_time:.4g}s violations={m.violations}")
    return 0


def cmd_compare(args) -> int:
    spec = _scenario(args)
    labels = tuple(c.strip() for c in args.controllers.split(","))
    bad = [c for c in labels if c not in CONTROLLERS]
    if bad:
        print(f"error: unknown controller(s) {', '.join(bad)}", file=sys.stderr)
        return 2
    comp = compare(spec, labels, out_dir=args.out, fmt=args.format, plots=args.plots, workers=args.workers)
    print(comp.render())
    if comp.vsm_gains is not None:
        print(f"tuned VSM gains: k_m={comp.vsm_gains.k_m:g} k_d={comp.vsm_gains.k_d:g}")
    return 0


def cmd_tune(args) -> int:
    spec = _scenario(args)
    res = tune_vsm(spec, workers=args.workers)
    print(f"best k_m={res.best.k_m:g} k_d={res.best.k_d:g} objective={res.best_metrics.objective:.6g}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        rows = [{"k_m": g.k_m, "k_d": g.k_d, "objective": None if m is None else m.objective,
                 "nadir": None if m is None else m.nadir} for g, m in res.table]
        (out / "vsm_grid.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))
    return 0


def cmd_validate(args) -> int:
    case = load_case(args.case)
    print(f"{case.name}: {case.n_gen} machines, {case.n_ibr} IBRs, "
          f"{len(case.data.get('bus', []))} buses, {len(case.data.get('branch', []))} branches; "
          f"lossless={case.net.is_lossless}")
    return 0


def cmd_emit(args) -> int:
    from ..mipc import build_bundle, build_linear_model
    from ..netmodel import dc_partition
    from ..plant import solve_equilibrium
    from ..qp import write_matrices

    case = load_case(args.case)
    eq = solve_equilibrium(case.net, case.p_gen, case.p_ibr)
    part = dc_partition(case.net) if args.flat else dc_partition(case.net, (eq.delta, eq.u))
    h = args.control_period
    model = build_linear_model(part, case.params, h, scheme=args.scheme)
    n = model.n
    bundle = build_bundle(model.A, model.Bu, model.C, args.horizon, np.eye(n), h * np.eye(n), h)
    mats = {"A": model.A, "Bu": model.Bu, "Bd": model.Bd, "C": model.C,
            "B_GG": part.B_GG, "B_GI": part.B_GI, "B_IG": part.B_IG, "B_II": part.B_II,
            "S": bundle.S, "M": bundle.M, "Theta": bundle.Theta, "Gamma": bundle.Gamma,
            "G": bundle.G, "F": bundle.F, "H": bundle.H}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_matrices(out / "matrices.txt", mats)
    print(f"wrote {len(mats)} matrices to {out / 'matrices.txt'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="freqctl", description="Frequency-control workbench")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_args(sp, with_plots=True):
        sp.add_argument("--scenario", required=True, help="scenario TOML file or bundled scenario name")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="override the scenario RNG seed")
        sp.add_argument("--format", choices=("csv", "json-lines"), default="csv", help="metrics format")
        if with_plots:
            sp.add_argument("--plots", action="store_true", help="write SVG plots (needs matplotlib)")

    sp = sub.add_parser("run", help="run one scenario")
    scenario_args(sp)
    sp.add_argument("--controller", choices=CONTROLLERS, help="override the scenario controller")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="run a scenario under several controllers")
    scenario_args(sp)
    sp.add_argument("--controllers", default="none,vsm,mipc")
    sp.add_argument("--workers", type=int, default=1, help="processes for the VSM grid")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("tune-vsm", help="grid-tune VSM gains on a scenario")
    scenario_args(sp, with_plots=False)
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_tune)

    sp = sub.add_parser("validate-case", help="parse and validate a case file")
    sp.add_argument("case")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("emit-matrices", help="write model and prediction matrices for a case")
    sp.add_argument("--case", required=True)
    sp.add_argument("--horizon", type=int, required=True)
    sp.add_argument("--control-period", type=float, default=0.05)
    sp.add_argument("--scheme", choices=("symplectic", "explicit"), default="symplectic")
    sp.add_argument("--flat", action="store_true", help="linearize at flat angles instead of the equilibrium")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_emit)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CaseFormatError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    except FreqCtlError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

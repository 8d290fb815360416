"""Command line interface: ``hadamard-lab <command> ...``.

Exit codes: 0 success, 1 a checked criterion failed, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import HadamardLabError, ScenarioError, TooFewPoints

log = logging.getLogger("hadamard_lab")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hadamard-lab", description="Eigenvalue shifts under boundary perturbations.")
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="worker processes for sweep rows (default: $HADAMARD_THREADS or 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="spectrum of one domain")
    s.add_argument("--square", action="store_true", help="unit square with Dirichlet sides")
    s.add_argument("--domain", help="domain JSON file (width, height, bottom, side_condition)")
    s.add_argument("--count", type=_positive_int, default=5)
    s.add_argument("--nx", type=_positive_int, default=64)
    s.add_argument("--ny", type=_positive_int, default=64)
    s.add_argument("--grading", type=float, default=1.0)
    s.add_argument("--single", action="store_true", help="one mesh level, no extrapolation")
    s.add_argument("--dump-mesh", metavar="PATH", help="write the coarse mesh in the plain-text dump format")
    s.add_argument("--dump-matrix", metavar="PREFIX",
                   help="write stiffness and mass as PREFIX_K.mtx and PREFIX_M.mtx")

    w = sub.add_parser("sweep", help="run a scenario (JSON file or built-in name)")
    w.add_argument("scenario")
    w.add_argument("--out", default="results")
    w.add_argument("--quantity", action="append", help="quantity to fit (repeatable)")

    c = sub.add_parser("counterexample", help="cell problem vs the Lipschitz family")
    c.add_argument("--waveform", default="cos", choices=["cos", "tent"])
    c.add_argument("--dmax", type=float, default=1e-2)
    c.add_argument("--points", type=_positive_int, default=5)
    c.add_argument("--out", default=None, help="also write the sweep report here")

    r = sub.add_parser("probe", help="abstract-framework scalings on the uniform shift")
    r.add_argument("--dmax", type=float, default=1e-2)
    r.add_argument("--points", type=_positive_int, default=6)
    r.add_argument("--out", default=None)

    e = sub.add_parser("report", help="re-render a report from its CSV")
    e.add_argument("csv")
    e.add_argument("--out", default=None, help="output directory (default: next to the CSV)")
    e.add_argument("--quantity", action="append")

    sub.add_parser("scenarios", help="list built-in scenarios")
    return p


# ---------------------------------------------------------------------------

def _cmd_solve(args) -> int:
    from .fem import DofMap, assemble
    from .geometry import BoundaryProfile, DomainSpec, SideCondition
    from .hadamard import solve_domain, richardson
    from .mesh import ReferenceGrid, build_mapped_mesh

    if args.square == bool(args.domain):
        print("solve: give exactly one of --square or --domain", file=sys.stderr)
        return 2
    if args.square:
        spec = DomainSpec(1.0, 1.0, BoundaryProfile.flat(), SideCondition.DIRICHLET)
    else:
        spec = DomainSpec.from_dict(json.loads(Path(args.domain).read_text()))
    grid = ReferenceGrid(args.nx, args.ny, args.grading)
    grids = [grid] if args.single else [grid, grid.refined(2)]
    mesh = build_mapped_mesh(spec, grid)
    if args.dump_mesh:
        mesh.dump(args.dump_mesh)
    if args.dump_matrix:
        import scipy.io
        K, M = assemble(mesh, DofMap.build(mesh))
        scipy.io.mmwrite(f"{args.dump_matrix}_K.mtx", K)
        scipy.io.mmwrite(f"{args.dump_matrix}_M.mtx", M)
    levels = [np.array([p.lam for p in solve_domain(spec, g, args.count).pairs]) for g in grids]
    lam = levels[0] if len(levels) == 1 else np.sort(richardson(levels[0], levels[1]))
    for k, v in enumerate(lam, 1):
        print(f"{k:3d}  {v:.10f}")
    return 0


def _fit_all(rows, quantities, floor):
    from .experiments import fit_rate
    fits = {}
    for q in quantities:
        try:
            fits[q] = fit_rate(rows, q, floor=floor)
        except TooFewPoints as exc:
            log.warning("no fit for %s: %s", q, exc)
    return fits


def _run_scenario(sc, out, threads, quantities=None) -> tuple:
    from .experiments import evaluate_check, run_sweep
    from .report import emit_report, summary_of
    result = run_sweep(sc, threads)
    checks = [evaluate_check(result.rows, c, result.noise_floor) for c in sc.checks]
    qs = quantities or list(dict.fromkeys([c.quantity for c in sc.checks if c.kind == "slope"] + ["r_1"]))
    fits = _fit_all(result.rows, qs, result.noise_floor)
    summary = summary_of(result, checks)
    paths = emit_report(result.rows, fits, out, name=sc.name, summary=summary, plot=qs[0])
    return result, checks, paths


def _cmd_sweep(args) -> int:
    from .experiments import get_scenario
    try:
        sc = get_scenario(args.scenario)
    except FileNotFoundError:
        print(f"sweep: no such scenario or file: {args.scenario}", file=sys.stderr)
        return 2
    except (ScenarioError, json.JSONDecodeError) as exc:
        print(f"sweep: {exc}", file=sys.stderr)
        return 2
    _, checks, paths = _run_scenario(sc, args.out, args.threads, args.quantity)
    for c in checks:
        print(f"{'PASS' if c['pass'] else 'FAIL'}  {c['name']}: {c['value']}")
    print(json.dumps(paths))
    return 0 if all(c["pass"] for c in checks) else 1


def _cmd_counterexample(args) -> int:
    from .experiments import counterexample, evaluate_check
    from .report import emit_report
    summary, result = counterexample(args.waveform, args.dmax, args.points, threads=args.threads)
    if args.out:
        fits = _fit_all(result.rows, ["r_1"], result.noise_floor)
        emit_report(result.rows, fits, args.out, name="counterexample", summary=summary)
    print(json.dumps(summary, indent=2))
    return 0 if summary["pass"] else 1


def _cmd_probe(args) -> int:
    from dataclasses import replace
    from .experiments import builtin_scenarios
    sc = replace(builtin_scenarios()["probe-shift"], d_start=args.dmax, d_count=args.points)
    _, checks, paths = _run_scenario(sc, args.out or "results", args.threads)
    for c in checks:
        print(f"{'PASS' if c['pass'] else 'FAIL'}  {c['name']}: {c['value']:.4f}"
              if c["value"] is not None else f"FAIL  {c['name']}: no fit")
    return 0 if all(c["pass"] for c in checks) else 1


def _cmd_report(args) -> int:
    from .report import emit_report, read_csv
    src = Path(args.csv)
    if not src.is_file():
        print(f"report: no such file: {src}", file=sys.stderr)
        return 2
    rows = read_csv(src)
    summary, floor, old_fits = {"source": src.name}, 0.0, []
    js = src.with_suffix(".json")
    if js.is_file():
        old = json.loads(js.read_text())
        old_fits = list(old.get("fits", {}))
        floor = float(old.get("noise_floor") or 0.0)
        summary = {k: v for k, v in old.items() if k not in ("fits", "plot")}
        if old.get("plot") in old_fits:
            old_fits.remove(old["plot"])
            old_fits.insert(0, old["plot"])
    qs = args.quantity or old_fits or ["r_1"]
    fits = _fit_all(rows, qs, floor)
    out = Path(args.out) if args.out else src.parent
    emit_report(rows, fits, out, name=src.stem, summary=summary, plot=qs[0])
    return 0


def _cmd_scenarios(args) -> int:
    from .experiments import builtin_scenarios
    for name, sc in builtin_scenarios().items():
        print(f"{name:14s} regime={sc.regime} T={sc.T:g} R={sc.R:g} sides={sc.side_condition} m={sc.m}")
    return 0


COMMANDS = {"solve": _cmd_solve, "sweep": _cmd_sweep, "counterexample": _cmd_counterexample,
            "probe": _cmd_probe, "report": _cmd_report, "scenarios": _cmd_scenarios}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is None and os.environ.get("HADAMARD_THREADS"):
        try:
            args.threads = _positive_int(os.environ["HADAMARD_THREADS"])
        except (ValueError, argparse.ArgumentTypeError):
            print("HADAMARD_THREADS must be a positive integer", file=sys.stderr)
            return 2
    try:
        return COMMANDS[args.command](args)
    except HadamardLabError as exc:
        print(f"{args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1

"""Command-line entry point: ``pwhetero <command> [options]``.

Exit codes: 0 success, 2 input error, 3 non-convergence, 4 missing
prerequisite run.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from ..errors import ConvergenceError, DependencyError, InputError, ParameterError, PwHeteroError
from ..kgrid import monkhorst_pack
from ..pseudo.potential import PSEUDO_PATH_ENV, check_norm_conservation, load_pseudo, resolve_pseudo
from ..pseudo.upf import parse_upf_name
from .deck import parse_deck
from .workflows import WORKFLOWS, run_deck

log = logging.getLogger("pwhetero")

EXIT_OK = 0
EXIT_INPUT = InputError.exit_code
EXIT_CONVERGENCE = ConvergenceError.exit_code
EXIT_DEPENDENCY = DependencyError.exit_code


def _common():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--deck", type=Path, help="input deck")
    common.add_argument("--workdir", type=Path, default=Path("."), help="results go to WORKDIR/<prefix>/")
    common.add_argument("--threads", type=int, default=1, help="worker threads (k points or sweep rows)")
    common.add_argument("--format", choices=("tsv", "json"), default="tsv", help="summary format on stdout")
    common.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override a deck value, e.g. --set system.ecutwfc=8 (repeatable)",
    )
    common.add_argument("--force", action="store_true", help="accept unconverged prerequisite runs")
    common.add_argument("--pseudo-path", action="append", default=[], help=f"extra pseudopotential directory (also ${PSEUDO_PATH_ENV})")
    common.add_argument("-v", "--verbose", action="count", default=0)
    return common


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="pwhetero", description="Plane-wave DFT for 2D heterobilayers.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "scf": "self-consistent ground state",
        "bands": "bands along the deck's path from a stored scf run",
        "dos": "density of states from a stored scf run",
        "pdos": "atom- and l-projected DOS from a stored scf run",
        "cdd": "charge-density difference against the isolated layers",
        "bind-scan": "binding energy over interlayer distance",
        "gap-scan": "band gap, location and type over interlayer distance",
        "strain-scan": "band gap and energy under biaxial strain",
    }
    for name in WORKFLOWS:
        sub.add_parser(name, parents=[common], help=helps[name])
    mp = sub.add_parser("mp-grid", parents=[common], help="print a Monkhorst-Pack mesh")
    mp.add_argument("mesh", type=int, nargs=3, metavar="N")
    vp = sub.add_parser("validate-pseudo", parents=[common], help="norm-conservation check of a radial table")
    vp.add_argument("target", help="a .psp file or an element symbol")
    vp.add_argument("--tolerance", type=float, default=1e-3)
    pn = sub.add_parser("parse-name", parents=[common], help="split a UPF file name into its fields")
    pn.add_argument("name")
    return parser


def _overrides(pairs):
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise ParameterError(f"--set expects KEY=VALUE, got {pair!r}")
        out[key.strip()] = value.strip()
    return out


def _emit(data, fmt, out):
    if fmt == "json":
        out.write(json.dumps(data, indent=2, sort_keys=True, default=str) + "\n")
        return
    for key, value in data.items():
        if isinstance(value, (list, dict)):
            value = json.dumps(value, sort_keys=True, default=str)
        out.write(f"{key}\t{value}\n")


def _run_workflow(args, out):
    if args.deck is None:
        raise ParameterError(f"{args.command} needs --deck")
    overrides = _overrides(args.set)
    deck = parse_deck(args.deck)
    if overrides:
        deck = deck.with_overrides(overrides)
    manifest = run_deck(
        deck, args.workdir, args.command, threads=args.threads, force=args.force,
        overrides=overrides, search_path=tuple(args.pseudo_path),
    )
    summary = {
        "command": args.command,
        "prefix": manifest["prefix"],
        "directory": str(Path(args.workdir) / manifest["prefix"]),
        "files": sorted(manifest["files"]),
    }
    for key in ("converged", "iterations", "total_energy_Ha", "gap_meV", "gap_position", "minimum"):
        if key in manifest:
            summary[key] = manifest[key]
    _emit(summary, args.format, out)


def _mp_grid(args, out):
    mesh = monkhorst_pack(*args.mesh)
    if args.format == "json":
        data = {"points": mesh.points.tolist(), "weights": mesh.weights.tolist()}
        out.write(json.dumps(data, indent=2) + "\n")
        return
    out.write("k1\tk2\tk3\tweight\n")
    for p, w in zip(mesh.points, mesh.weights):
        out.write(f"{p[0]:.10f}\t{p[1]:.10f}\t{p[2]:.10f}\t{w:.12f}\n")


def _validate_pseudo(args, out):
    target = Path(args.target)
    if not target.is_file():
        target = resolve_pseudo(args.target, None, args.pseudo_path)
    report = check_norm_conservation(load_pseudo(target), tolerance=args.tolerance)
    data = {"file": str(target), "tolerance": args.tolerance, "passed": report.passed}
    for l, dev in sorted(report.deviations.items()):
        data[f"deviation_l{l}"] = dev
    if report.unchecked:
        data["unchecked_l"] = list(report.unchecked)
    _emit(data, args.format, out)
    if not report.passed:
        raise InputError(f"norm conservation fails for {target} at tolerance {args.tolerance:g}")


def _parse_name(args, out):
    meta = parse_upf_name(args.name)
    _emit(dataclasses.asdict(meta), args.format, out)


def main(argv=None, out=None):
    """Run the CLI and return the exit code."""
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in WORKFLOWS:
            _run_workflow(args, out)
        elif args.command == "mp-grid":
            _mp_grid(args, out)
        elif args.command == "validate-pseudo":
            _validate_pseudo(args, out)
        elif args.command == "parse-name":
            _parse_name(args, out)
    except PwHeteroError as exc:
        print(f"pwhetero: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Exit codes: 0 success, 1 a check ran but did not pass, 2 bad input,
3 numerical failure.  Operator and set arguments accept inline JSON or a
path to a JSON file.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import continuum as cont
from . import jacobi as jac
from . import verifiers as ver
from .bands import NumericalFailure
from .cmv import PeriodicCMV, arc_band_structure
from .intervals import (CircularArcSet, GridSpec, Interval, IntervalSet,
                        certify_arc_homogeneity, certify_homogeneity)
from .limit_periodic import (KINDS, PTSequence, Schedule, check_pt_condition,
                             generate_pt_sequence)

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


class InputError(ValueError):
    pass


def _load(arg: str):
    """Inline JSON, or a path to a JSON file."""
    text = arg
    if not arg.lstrip().startswith(("{", "[")):
        try:
            text = Path(arg).read_text()
        except OSError as exc:
            raise InputError(f"cannot read {arg}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed JSON: {exc}") from exc


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _emit(args, json_obj, csv_text: str | None) -> None:
    if args.format == "csv":
        if csv_text is None:
            raise InputError(f"{args.command} has no CSV output")
        text = csv_text
    else:
        text = _dump(json_obj)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _operator(kind: str, data):
    try:
        if kind == "jacobi":
            return jac.PeriodicJacobi.from_dict(data)
        if kind == "continuum":
            return cont.PiecewisePotential.from_dict(data)
        return PeriodicCMV.from_dict(data)
    except (KeyError, TypeError) as exc:
        raise InputError(f"bad {kind} operator: {exc!r}") from exc


def _arc_csv(arcs: CircularArcSet) -> str:
    rows = ["arc_index,start,end,length"]
    for k, (s, e) in enumerate(arcs.to_list(), start=1):
        rows.append(f"{k},{s!r},{e!r},{e - s!r}")
    return "\n".join(rows) + "\n"


# -- subcommands -----------------------------------------------------------------


def cmd_bands(args) -> int:
    given = [(k, v) for k, v in (("jacobi", args.jacobi), ("continuum", args.continuum),
                                 ("cmv", args.cmv)) if v is not None]
    if len(given) != 1:
        raise InputError("give exactly one of --jacobi, --continuum, --cmv")
    kind, raw = given[0]
    op = _operator(kind, _load(raw))
    if kind == "cmv":
        ab = arc_band_structure(op)
        out = {"schema_version": ver.SCHEMA_VERSION, "kind": kind, **ab.to_dict()}
        _emit(args, out, _arc_csv(ab.arcs))
        return EXIT_OK
    if kind == "continuum":
        if args.emax is None:
            raise InputError("continuum bands need --emax")
        bs = cont.band_structure_window(op, args.emax)
    else:
        bs = jac.band_structure(op)
    _emit(args, {"schema_version": ver.SCHEMA_VERSION, "kind": kind, **bs.to_dict()},
          bs.edge_table_csv())
    return EXIT_OK


def _grid(args) -> GridSpec:
    return GridSpec(mesh_per_part=args.mesh, ladder=args.ladder)


def cmd_homogeneity(args) -> int:
    if (args.set is None) == (args.arcs is None):
        raise InputError("give exactly one of --set, --arcs")
    keep = args.format == "csv"
    if args.set is not None:
        data = _load(args.set)
        try:
            A = IntervalSet.from_json(data)
        except (KeyError, TypeError) as exc:
            raise InputError(f"bad interval set: {exc!r}") from exc
        rep = certify_homogeneity(A, args.tau, args.delta0, _grid(args), keep_profile=keep)
    else:
        data = _load(args.arcs)
        try:
            A = CircularArcSet.of(data["arcs"])
        except (KeyError, TypeError) as exc:
            raise InputError(f"bad arc set: {exc!r}") from exc
        rep = certify_arc_homogeneity(A, args.tau, args.delta0, _grid(args), keep_profile=keep)
    _emit(args, {"schema_version": ver.SCHEMA_VERSION, **rep.to_dict()},
          rep.profile_csv() if keep else None)
    return EXIT_OK if rep.passed else EXIT_FAIL


def _schedule(args) -> Schedule:
    try:
        return Schedule.parse(args.schedule, args.levels, args.kind)
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed schedule: {exc}") from exc
    except (KeyError, TypeError) as exc:
        raise InputError(f"bad schedule: {exc!r}") from exc


def cmd_pt_run(args) -> int:
    S = generate_pt_sequence(args.kind, args.seed, args.levels, _schedule(args))
    pt = check_pt_condition(S, args.b_grid)
    emax = args.emax if args.emax is not None else (20.0 if args.kind == "continuum" else None)
    budget = ver.step_homogeneity(S, args.tau, C=args.C, C1=args.C1, q_mode=args.q_mode,
                                  E_max=emax, grid=_grid(args), threads=args.threads)
    if args.save_sequence:
        Path(args.save_sequence).write_text(S.to_json())
    out = {"schema_version": ver.SCHEMA_VERSION, "kind": S.kind, "seed": S.seed,
           "levels": S.N, "periods": S.periods, "increments": S.increments,
           "log_increments": S.log_increments, "pt_condition": pt.to_dict(),
           "budget": budget.to_dict(), "sequence": S.to_dict(),
           "pass": budget.passed}
    _emit(args, out, budget.to_csv())
    return EXIT_OK if budget.passed else EXIT_FAIL


def _ensemble(raw):
    data = _load(raw)
    kind = data.get("kind") if isinstance(data, dict) else None
    if kind not in ("jacobi", "continuum"):
        raise InputError("ensemble needs kind 'jacobi' or 'continuum'")
    if "pairs" in data:
        return kind, [(_operator(kind, a), _operator(kind, b)) for a, b in data["pairs"]]
    if "operators" in data:
        return kind, [_operator(kind, x) for x in data["operators"]]
    raise InputError("ensemble needs an 'operators' or 'pairs' list")


def cmd_verify(args) -> int:
    check = args.check
    if check in ("derivative", "band-length", "edge-stability"):
        if not args.ensemble:
            raise InputError(f"--check {check} needs --ensemble")
        kind, items = _ensemble(args.ensemble)
        if check == "edge-stability":
            if not items or not isinstance(items[0], tuple):
                raise InputError("edge-stability needs a 'pairs' ensemble")
            rep = ver.verify_edge_stability(items, args.constant, n_max=args.nmax,
                                            threads=args.threads)
        else:
            if items and isinstance(items[0], tuple):
                items = [x for pair in items for x in pair]
            fn = ver.verify_derivative_bound if check == "derivative" else ver.verify_band_length_bound
            rep = fn(items, args.constant, E_max=args.emax, threads=args.threads)
        out = rep.fit.to_dict() if rep.fit else {}
        out.update(rep.to_dict())
        _emit(args, out, rep.to_csv())
        return EXIT_OK if rep.passed else EXIT_FAIL
    if not args.sequence:
        raise InputError(f"--check {check} needs --sequence")
    try:
        S = PTSequence.from_dict(_load(args.sequence))
    except (KeyError, TypeError) as exc:
        raise InputError(f"bad sequence: {exc!r}") from exc
    if check == "semicontinuity":
        if args.interval is None:
            raise InputError("semicontinuity needs --interval LO HI")
        rep = ver.verify_semicontinuity(S, Interval(*args.interval), E_max=args.emax)
        d = rep.to_dict()
        rows = ["level,measure"] + [f"{k},{m!r}" for k, m in enumerate(rep.measures, 1)]
        _emit(args, d, "\n".join(rows) + "\n")
        return EXIT_OK if rep.passed else EXIT_FAIL
    rep = ver.gap_length_partial_sums(S, E_max=args.emax)
    rows = ["level,gap_sum,gap_count"] + [
        f"{k},{s!r},{c}" for k, (s, c) in enumerate(zip(rep.sums, rep.counts), 1)]
    _emit(args, rep.to_dict(), "\n".join(rows) + "\n")
    return EXIT_OK


def cmd_norms(args) -> int:
    V = _operator("continuum", _load(args.continuum))
    out = {"schema_version": ver.SCHEMA_VERSION, "T": V.T,
           "besicovitch": cont.besicovitch_norm(V), "stepanov": cont.stepanov_norm(V)}
    if args.other:
        W = _operator("continuum", _load(args.other))
        out["besicovitch_distance"] = cont.besicovitch_distance(V, W)
        out["stepanov_distance"] = cont.stepanov_distance(V, W)
    keys = [k for k in out if k != "schema_version"]
    csv_text = ",".join(keys) + "\n" + ",".join(repr(out[k]) for k in keys) + "\n"
    _emit(args, out, csv_text)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _common(default: bool) -> argparse.ArgumentParser:
    sup = argparse.SUPPRESS
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--format", choices=("json", "csv"), default="json" if default else sup)
    p.add_argument("--out", default=None if default else sup, help="output file (default stdout)")
    p.add_argument("--threads", type=_positive_int, default=None if default else sup,
                   help=f"worker threads (default ${ver.THREADS_ENV} or 1)")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lphomog", parents=[_common(True)],
                                     description="Band spectra and homogeneity checks "
                                                 "for periodic and limit-periodic operators.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common(False)

    p = sub.add_parser("bands", parents=[common], help="band table of a periodic operator")
    p.add_argument("--jacobi")
    p.add_argument("--continuum")
    p.add_argument("--cmv")
    p.add_argument("--emax", type=float)
    p.set_defaults(func=cmd_bands)

    def grid_flags(q):
        q.add_argument("--mesh", type=int, default=GridSpec.mesh_per_part)
        q.add_argument("--ladder", type=int, default=GridSpec.ladder)

    p = sub.add_parser("homogeneity", parents=[common], help="certify tau-homogeneity of a set")
    p.add_argument("--set")
    p.add_argument("--arcs")
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--delta0", type=float, required=True)
    grid_flags(p)
    p.set_defaults(func=cmd_homogeneity)

    p = sub.add_parser("pt-run", parents=[common], help="generate a sequence and run the budget")
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--levels", type=_positive_int, default=4)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--schedule", default="default",
                   help="'default', 'exp:<rate>' or JSON {periods, eps|log_eps}")
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--emax", type=float)
    p.add_argument("--q-mode", choices=("finite", "upper"), default="finite")
    p.add_argument("--C", type=float)
    p.add_argument("--C1", type=float)
    p.add_argument("--b-grid", type=float, nargs="+", default=[0.1, 1.0, 10.0])
    p.add_argument("--save-sequence")
    grid_flags(p)
    p.set_defaults(func=cmd_pt_run)

    p = sub.add_parser("verify", parents=[common], help="check or fit an estimate")
    p.add_argument("--check", required=True, choices=("derivative", "band-length",
                                                      "edge-stability", "semicontinuity",
                                                      "gap-sums"))
    p.add_argument("--ensemble")
    p.add_argument("--sequence")
    p.add_argument("--constant", type=float, help="verify with this constant instead of fitting")
    p.add_argument("--emax", type=float, default=100.0)
    p.add_argument("--nmax", type=_positive_int, default=20)
    p.add_argument("--interval", type=float, nargs=2, metavar=("LO", "HI"))
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("norms", parents=[common], help="Besicovitch and Stepanov norms")
    p.add_argument("--continuum", required=True)
    p.add_argument("--other")
    p.set_defaults(func=cmd_norms)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is None:
        args.threads = ver.default_threads()
    try:
        return args.func(args)
    except NumericalFailure as exc:
        print(f"lphomog: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ValueError, OverflowError) as exc:
        print(f"lphomog: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

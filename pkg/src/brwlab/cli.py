"""Command-line front door: config resolution, seed management, dispatch.

Config files are flat ``key=value`` text ('#' comments); command-line flags
override file values.  Exit codes: 0 success, 1 configuration/usage error,
2 run flagged invalid (replica failure rate above 1%).
"""

import argparse
import json
import sys

import numpy as np

from .errors import BrwError, ConfigInvalid, ParseError, ValidationError
from .events import BlockConfig
from .experiments import (
    ExperimentConfig,
    compare_dimensions,
    estimate_R,
    estimate_gamma,
    estimate_volume,
    run_blocks,
    run_intersections,
    survival_ratio,
)
from .offspring import load_offspring
from .reporting import format_csv, write_report
from .resistance import effective_resistance, parse_graph_file, shorted_resistance


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def parse_config_text(text: str) -> dict:
    """Flat key=value lines; '#' starts a comment; values stay strings."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected key=value on line {lineno}", line=lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ParseError(f"empty key on line {lineno}", line=lineno)
        out[key] = value.strip()
    return out


def serialize_config(cfg: dict) -> str:
    return "\n".join(f"{k}={cfg[k]}" for k in sorted(cfg)) + "\n"


def _int_list(text: str):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ValidationError(f"expected comma-separated integers, got {text!r}")


def _build_parser() -> _Parser:
    top = _Parser(prog="brwlab", description=__doc__)
    sub = top.add_subparsers(dest="command", required=True)

    def common(p, with_step=True):
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--out", default=None, help="artifact output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--offspring", default="binary")
        if with_step:
            p.add_argument("--step", default=None)

    p = sub.add_parser("survival", help="survival-probability ratio table")
    common(p, with_step=False)
    p.add_argument("--n", default="1000", help="comma list of n values")

    p = sub.add_parser("simulate-resistance", help="R(n) to the shorted generation n")
    common(p)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--n", required=True, help="comma list of n values")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-8)

    p = sub.add_parser("gamma", help="endpoint-pinned resistance")
    common(p)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--n", required=True)
    p.add_argument("--x", default=None, help="comma lattice vector (default origin)")
    p.add_argument("--m-policy", choices=["2n", "4n"], default="2n")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-8)

    p = sub.add_parser("volume", help="backbone-tree volume growth")
    common(p, with_step=False)
    p.add_argument("--n", required=True)
    p.add_argument("--reps", type=int, default=200)

    p = sub.add_parser("intersections", help="intersection counts of two embedded trees")
    common(p)
    p.add_argument("--d", type=int, default=5)
    p.add_argument("--delta-n", required=True, help="comma list of block lengths")
    p.add_argument("--reps", type=int, default=500)
    p.add_argument("--x", default=None)

    p = sub.add_parser("blocks", help="block classification frequencies")
    common(p)
    p.add_argument("--d", type=int, default=5)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--c0", type=float, default=0.05)
    p.add_argument("--i", type=int, default=0)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--reps", type=int, default=1000)

    p = sub.add_parser("compare-dims", help="R(n) slopes across dimensions")
    common(p, with_step=False)
    p.add_argument("--d", required=True, help="comma list of dimensions")
    p.add_argument("--n", required=True)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-8)

    p = sub.add_parser("resistance-solve", help="solve one graph file")
    p.add_argument("--config", default=None)
    p.add_argument("--graph", required=True)
    p.add_argument("--source", type=int, required=True)
    p.add_argument("--target", type=int, default=None)
    p.add_argument("--short-set", default=None, help="file of node ids to merge")
    p.add_argument("--tol", type=float, default=1e-8)
    return top


def _apply_config(parser, argv):
    """Load --config (if any) and install its values as parser defaults."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config", default=None)
    known, _ = probe.parse_known_args(argv[1:] if argv and argv[0] in _SUBCOMMANDS else argv)
    if not known.config:
        return
    with open(known.config) as fh:
        raw = parse_config_text(fh.read())
    # find the subcommand parser and validate keys against its options
    sub_actions = [a for a in parser._actions if isinstance(a, argparse._SubParsersAction)]
    name = argv[0] if argv else None
    subparser = sub_actions[0].choices.get(name) if sub_actions and name else None
    if subparser is None:
        return
    dests = {a.dest for a in subparser._actions}
    defaults = {}
    for key, value in raw.items():
        dest = key.replace("-", "_")
        if dest not in dests:
            raise ValidationError(f"unknown config key {key!r}")
        defaults[dest] = value
    # let argparse re-coerce typed values; a key supplied by the file also
    # satisfies a required flag
    for a in subparser._actions:
        if a.dest in defaults:
            if a.type is not None:
                defaults[a.dest] = a.type(defaults[a.dest])
            a.required = False
    subparser.set_defaults(**defaults)


_SUBCOMMANDS = ("survival", "simulate-resistance", "gamma", "volume",
                "intersections", "blocks", "compare-dims", "resistance-solve")


def _experiment_config(args, n_values, m_policy="2n") -> ExperimentConfig:
    return ExperimentConfig(
        d=args.d, n_values=n_values, replicas=args.reps, seed=args.seed,
        offspring=args.offspring, step=getattr(args, "step", None),
        m_policy=m_policy, tol=getattr(args, "tol", 1e-8), out=args.out,
    )


def _emit(report, args, name) -> int:
    if args.out:
        write_report(report, args.out, name)
    for row in report.summary:
        print(json.dumps(row, default=str))
    for key, fit in report.fits.items():
        print(f"fit[{key}]: {json.dumps(fit, default=str)}")
    if report.failures:
        print(f"failures: {report.failures}", file=sys.stderr)
    return 2 if report.invalid else 0


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = _build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        return _dispatch(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ValidationError, ConfigInvalid, ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BrwError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "survival":
        p = load_offspring(args.offspring)
        rows = [{"n": n, "theta": p.survival(n)[n], "ratio": ratio}
                for n, ratio in survival_ratio(p, _int_list(args.n))]
        text = format_csv(rows, ["n", "theta", "ratio"])
        print(text, end="")
        if args.out:
            import os

            os.makedirs(args.out, exist_ok=True)
            with open(os.path.join(args.out, "survival.csv"), "w") as fh:
                fh.write(text)
        return 0
    if cmd == "simulate-resistance":
        report = estimate_R(_experiment_config(args, _int_list(args.n)))
        return _emit(report, args, "resistance")
    if cmd == "gamma":
        cfg = _experiment_config(args, _int_list(args.n), m_policy=args.m_policy)
        x = _int_list(args.x) if args.x else tuple([0] * args.d)
        if len(x) != args.d:
            raise ValidationError(f"x must have {args.d} coordinates")
        report = estimate_gamma(cfg, np.asarray(x, dtype=np.int64))
        return _emit(report, args, "gamma")
    if cmd == "volume":
        cfg = ExperimentConfig(d=1, n_values=_int_list(args.n), replicas=args.reps,
                               seed=args.seed, offspring=args.offspring)
        report = estimate_volume(cfg)
        return _emit(report, args, "volume")
    if cmd == "intersections":
        x = _int_list(args.x) if args.x else None
        report = run_intersections(args.d, _int_list(args.delta_n), args.reps,
                                   args.seed, offspring=args.offspring,
                                   step=args.step, x=x)
        return _emit(report, args, "intersections")
    if cmd == "blocks":
        cfg = BlockConfig(n=args.n, delta=args.delta, K=args.K, c0=args.c0, i=args.i)
        report = run_blocks(cfg, args.reps, args.seed, offspring=args.offspring,
                            step=args.step, d=args.d, m=args.m)
        return _emit(report, args, "blocks")
    if cmd == "compare-dims":
        cfg = ExperimentConfig(d=1, n_values=_int_list(args.n), replicas=args.reps,
                               seed=args.seed, offspring=args.offspring,
                               tol=args.tol)
        report = compare_dimensions(cfg, _int_list(args.d))
        return _emit(report, args, "compare-dims")
    if cmd == "resistance-solve":
        with open(args.graph) as fh:
            net = parse_graph_file(fh.read())
        if args.short_set:
            with open(args.short_set) as fh:
                terminals = [int(t) for t in fh.read().split()]
            res = shorted_resistance(net, args.source, terminals, tol=args.tol)
        else:
            if args.target is None:
                raise ValidationError("--target or --short-set is required")
            res = effective_resistance(net, args.source, args.target, tol=args.tol)
        print(json.dumps({"value": res.value, "method": res.method,
                          "iterations": res.iterations, "residual": res.residual}))
        return 0
    raise ValidationError(f"unknown command {cmd!r}")


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: ``pamcat <subcommand> [options]``.

Each subcommand prints its CSV to standard output and, with ``--out-dir``,
also writes it to ``<out-dir>/<subcommand>.csv``.  Exit status is 0 on
success, 2 on invalid input and 3 on numerical failure.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
import warnings

from .errors import NumericalError, ValidationError
from .harness import SCHEMAS, format_csv, replay, run, run_stage
from .parallel import set_threads

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def _add_globals(p, suppress):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d if suppress else 0, help="master seed")
    p.add_argument("--threads", type=int, default=d if suppress else 1,
                   help="worker threads (0: all cores)")
    p.add_argument("--out-dir", default=d, help="also write CSV files here")


def _kappas(s):
    return tuple(float(x) for x in s.replace(",", " ").split())


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pamcat", description=__doc__.splitlines()[0])
    _add_globals(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True)

    def new(name, help_):
        p = sub.add_parser(name, help=help_)
        _add_globals(p, suppress=True)
        return p

    p = new("kernels", "random-walk kernels and Green function values")
    p.add_argument("--t", type=float, action="append", help="time (repeatable; default 1)")
    p.add_argument("--x", action="append", help="site as 'x1,x2,x3' (repeatable; default origin)")
    p.add_argument("--no-green", action="store_true", help="skip the Green-function table")

    p = new("sse", "stirring simulation against the Bernoulli one-point law")
    p.add_argument("--side", type=int, default=8)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--replicas", type=int, default=10_000)
    p.add_argument("--sites", default="0", help="comma-separated site indices")
    p.add_argument("--trace", action="store_true", help="emit per-replica occupancies instead")

    p = new("moment", "annealed moment E u(0,t)^p")
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--side", type=int, default=8)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--direct-samples", type=int, default=1_000)
    p.add_argument("--method", choices=("fk", "direct", "both"), default="fk")

    p = new("spectral", "top eigenvalue of generator plus potential on a small sector")
    p.add_argument("--side", type=int, default=3)
    p.add_argument("--particles", type=int, default=2)
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--potential-file", default="", help="one value per state (default: random)")
    p.add_argument("--potential-scale", type=float, default=0.1)
    p.add_argument("--mc-check", action="store_true")
    p.add_argument("--mc-samples", type=int, default=20_000)

    p = new("polaron", "polaron variational value")
    p.add_argument("--coeff", type=float, default=1.0)
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--kcut", default="inf")
    p.add_argument("--grid-n", type=int, default=2048)
    p.add_argument("--rmax-mult", type=float, default=40.0)
    p.add_argument("--starts", default="0.25,1,4,16", help="start widths in units of sigma_ref")
    p.add_argument("--profile", action="store_true", help="emit the optimal profile r,f")

    p = new("lyapunov", "windowed Lyapunov exponent")
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--t-min", type=float, required=True)
    p.add_argument("--t-max", type=float, required=True)
    p.add_argument("--n-times", type=int, default=5)
    p.add_argument("--side", type=int, default=16)
    p.add_argument("--samples", type=int, default=10_000)

    for name, help_ in (("scan", "kappa (lambda_p - rho) against the large-kappa limit"),
                        ("intermittency", "lambda_2 - lambda_1 across kappa")):
        p = new(name, help_)
        p.add_argument("--rho", type=float, required=True)
        if name == "scan":
            p.add_argument("--p", type=int, default=1)
        p.add_argument("--kappas", type=_kappas, required=True, help="e.g. '1,2,4,8'")
        p.add_argument("--t-min", type=float, default=1.0 if name == "scan" else 0.5)
        p.add_argument("--t-max", type=float, default=3.0 if name == "scan" else 2.0)
        p.add_argument("--n-times", type=int, default=5)
        p.add_argument("--side", type=int, default=16)
        p.add_argument("--samples", type=int, default=10_000)

    p = new("run", "execute a configuration file, or replay a manifest")
    p.add_argument("config", help="INI configuration, or manifest.json with --replay")
    p.add_argument("--replay", action="store_true", help="re-run a manifest and compare digests")
    return ap


def _params(kind, args):
    a = vars(args)
    prm = {k: d for k, (_, d) in SCHEMAS[kind].items()}
    for k in prm:
        if k in a and a[k] is not None:
            prm[k] = a[k]
    return prm


def _stage_params(args):
    cmd = args.command
    if cmd == "kernels":
        prm = _params("kernels", args)
        prm["times"] = tuple(args.t or [1.0])
        prm["points"] = ";".join(x.replace(",", " ") for x in (args.x or ["0,0,0"]))
        prm["green"] = not args.no_green
        return prm
    if cmd == "sse":
        prm = _params("sse", args)
        prm["sites"] = tuple(int(s) for s in args.sites.replace(",", " ").split())
        return prm
    if cmd == "polaron":
        prm = _params("polaron", args)
        prm["kcut"] = math.inf if args.kcut.strip().lower() in ("inf", "infinity") else float(args.kcut)
        prm["dump_profile"] = args.profile
        return prm
    return _params(cmd, args)


def _emit(name, header, rows, out_dir):
    text = format_csv(header, rows)
    sys.stdout.write(text)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, f"{name}.csv"), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _dispatch(args) -> int:
    out_dir = getattr(args, "out_dir", None)
    if args.command == "run":
        if args.replay:
            _, mism = replay(args.config, out_dir or ".", args.threads)
            if mism:
                print("digest mismatch: " + ", ".join(mism), file=sys.stderr)
                return EXIT_NUMERICAL
            print("replay reproduced all outputs")
            return EXIT_OK
        manifest = run(args.config, out_dir or ".", args.threads)
        for f, digest in manifest.outputs.items():
            print(f"{f},{digest}")
        return EXIT_OK
    prm = _stage_params(args)
    if args.command == "polaron":
        from . import polaron

        starts = tuple(float(x) for x in args.starts.replace(",", " ").split())
        opts = polaron.PolaronOptions(n=prm["grid_n"], rmax_mult=prm["rmax_mult"], starts=starts)
        res = polaron.solve_cutoff_polaron(prm["coeff"], prm["eps"], prm["kcut"], opts)
        if args.profile:
            _emit("profile", ["r", "f"], [tuple(r) for r in res.profile.table()], out_dir)
        else:
            _emit("polaron", ["coeff", "eps", "kcut", "value", "grad_norm", "iters", "converged"],
                  [{"coeff": res.coeff, "eps": prm["eps"], "kcut": prm["kcut"], "value": res.value,
                    "grad_norm": res.grad_norm, "iters": res.iterations,
                    "converged": res.converged}], out_dir)
        return EXIT_OK
    arts = run_stage(args.command, prm, args.seed)
    if args.command == "sse" and args.trace:
        arts = {"sse": arts["trace"]}
    for name, (header, rows) in arts.items():
        if args.command == "kernels" and name == "green":
            sys.stdout.write("\n")
        _emit(name, header, rows, out_dir)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        set_threads(args.threads)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return _dispatch(args)
    except (ValidationError, ValueError, KeyError) as exc:
        print(f"pamcat: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, FloatingPointError, ArithmeticError) as exc:
        print(f"pamcat: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface.

    naum nmf    --input M.csv --rank 30 --alpha 0.6 --seed 1 --out trace.csv
    naum mc     --input M.csv --rank 30 --eta 5 --sr 0.5 --alpha 0.4 --seed 1
    naum bench  --config bench.json --out report.json --jobs 4
    naum verify

Exit status is 0 on success, 1 on solver or data errors and 2 on bad flags.
"""
from __future__ import annotations

import argparse
import json
import math
import sys

from .engine import SolveOptions
from .errors import NaumError
from .harness import TrialConfig, init_mc, init_nmf, relative_error, run_trials
from .linalg import as_dense
from .matio import FORMATS, CoordinateMatrix, load_matrix
from .mc import McProblem, run_palm, sample_mask, solve_mc
from .model import Scheme, derive_params
from .nmf import NmfProblem, run_hals, solve_nmf
from .verify import run_all

SCHEMES = [s.value for s in Scheme]


def _finite(kind):
    def parse(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid {kind.__name__} value: {text!r}") from None
        if kind is float and not math.isfinite(v):
            raise argparse.ArgumentTypeError(f"value must be finite: {text!r}")
        return v
    return parse


def _positive_or_inf(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid number: {text!r}") from None
    if not v > 0 or math.isnan(v):
        raise argparse.ArgumentTypeError(f"value must be positive: {text!r}")
    return v


def _solver_flags(p, alpha, scheme):
    p.add_argument("--input", required=True, help="matrix file")
    p.add_argument("--format", choices=FORMATS, help="matrix format (default: from extension)")
    p.add_argument("--rank", type=_finite(int), required=True)
    p.add_argument("--alpha", type=_finite(float), default=alpha)
    p.add_argument("--seed", type=_finite(int), default=0)
    p.add_argument("--max-iters", type=_finite(int), default=5000)
    p.add_argument("--max-seconds", type=_positive_or_inf, default=math.inf)
    p.add_argument("--tol-obj", type=_finite(float), default=1e-4)
    p.add_argument("--tol-change", type=_finite(float), default=1e-4)
    p.add_argument("--scheme-x", choices=SCHEMES, default=scheme)
    p.add_argument("--scheme-y", choices=SCHEMES, default=scheme)
    p.add_argument("--baseline", action="store_true",
                   help="run the baseline method (HALS or PALM) instead")
    p.add_argument("--out", help="trace CSV path")
    p.add_argument("--no-timing", action="store_true",
                   help="write 0 for wall-clock columns so outputs are reproducible")


def build_parser():
    parser = argparse.ArgumentParser(prog="naum", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("nmf", help="nonnegative matrix factorization")
    _solver_flags(p, 0.6, "hier")

    p = sub.add_parser("mc", help="matrix completion")
    _solver_flags(p, 0.4, "proxlin")
    p.add_argument("--eta", type=_finite(float), required=True)
    p.add_argument("--sr", type=_finite(float),
                   help="sampling ratio (required unless the input lists the observed entries)")

    p = sub.add_parser("bench", help="run a benchmark from a JSON config")
    p.add_argument("--config", "--input", dest="config", required=True)
    p.add_argument("--out", help="report JSON path (overrides the config)")
    p.add_argument("--jobs", type=_finite(int), default=1)
    p.add_argument("--no-timing", action="store_true")

    p = sub.add_parser("verify", help="run the built-in property suites")
    p.add_argument("--seed", type=_finite(int), default=0)
    return parser


def _options(args):
    return SolveOptions(max_iters=args.max_iters, max_seconds=args.max_seconds,
                        tol_obj=args.tol_obj, tol_change=args.tol_change)


def _params(args):
    return derive_params(args.alpha, scheme_x=args.scheme_x, scheme_y=args.scheme_y)


def _report(args, algorithm, trace, error, name):
    record = {
        "algorithm": algorithm,
        "iterations": trace.iterations,
        name: error,
        "objective": trace.final_objective,
        "seconds": 0.0 if args.no_timing else float(trace.times[-1]),
        "reason": trace.reason,
    }
    if args.out:
        trace.write_csv(args.out, timing=not args.no_timing)
    print(json.dumps(record))


def cmd_nmf(args):
    data = load_matrix(args.input, args.format)
    if isinstance(data, CoordinateMatrix):
        data = data.to_csr()
    prob = NmfProblem(data, args.rank)
    X0, Y0 = init_nmf(prob.m, prob.n, args.rank, prob.M, args.seed)
    if args.baseline:
        X, Y, trace = run_hals(prob, X0, Y0, _options(args))
        name = "hals"
    else:
        X, Y, trace = solve_nmf(prob, _params(args), X0, Y0, _options(args))
        name = f"naum-a{args.alpha:g}"
    _report(args, name, trace, relative_error(X, Y, prob.M), "relerr")
    return 0


def cmd_mc(args):
    data = load_matrix(args.input, args.format)
    if isinstance(data, CoordinateMatrix):
        prob = McProblem(data.pattern, data.values, args.rank, args.eta)
    else:
        if args.sr is None:
            raise NaumError("--sr is required for dense input")
        truth = as_dense(data, "M")
        prob = McProblem.from_matrix(truth, sample_mask(*truth.shape, args.sr, args.seed),
                                     args.rank, args.eta)
    X0, Y0 = init_mc(prob.m, prob.n, args.rank, args.seed)
    if args.baseline:
        X, Y, trace = run_palm(prob, X0, Y0, _options(args))
        name = "palm"
    else:
        X, Y, trace = solve_mc(prob, _params(args), X0, Y0, _options(args))
        name = f"naum-a{args.alpha:g}"
    if isinstance(data, CoordinateMatrix):
        # only the observed entries are known
        diff = prob.pattern.gather_product(X, Y) - prob.observed
        err = float((diff @ diff) ** 0.5 / (prob.observed @ prob.observed) ** 0.5)
    else:
        err = relative_error(X, Y, truth)
    _report(args, name, trace, err, "recerr")
    return 0


def cmd_bench(args):
    cfg = TrialConfig.load(args.config)
    report = run_trials(cfg, jobs=max(1, args.jobs))
    out = args.out or cfg.output
    if out:
        report.write(out, timing=not args.no_timing)
    print(json.dumps(report.aggregates["summary"], indent=2, sort_keys=True))
    return 0


def cmd_verify(args):
    results = run_all(args.seed)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name}: {r.passed} passed, {r.failed} failed")
    failed = sum(not r.ok for r in results)
    print(f"{len(results) - failed}/{len(results)} suites passed")
    return 0 if failed == 0 else 1


COMMANDS = {"nmf": cmd_nmf, "mc": cmd_mc, "bench": cmd_bench, "verify": cmd_verify}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (NaumError, OSError) as exc:
        print(f"naum {args.command}: error: {exc}", file=sys.stderr)
        return 1


__all__ = ["main", "build_parser"]

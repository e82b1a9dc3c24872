"""Command-line entry point: ``multibin {analyze,simulate,sweep,compare,fit}``.

Exit codes: 0 success, 1 usage or input error, 2 oracle check failed.
Output files default to ``$MULTIBIN_OUTPUT_DIR`` (or the working directory).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import analytics
from .experiments import (
    DESK_REQUESTS,
    PRESETS,
    RAW_COLUMNS,
    ExperimentSpec,
    analytic_columns,
    build_sim_config,
    compare,
    read_csv,
    resolve_params,
    run_experiment,
    write_csv,
)
from .service_models import harmonic
from .simulator import simulate
from .workload import fit_linear_model, load_trace

OUTPUT_ENV = "MULTIBIN_OUTPUT_DIR"
EXIT_OK, EXIT_USAGE, EXIT_CHECK_FAILED = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


FULL_SCALE = 10.0


def _scale_factor(value: str) -> float:
    presets = {"desk": 1.0, "full": FULL_SCALE}
    if value in presets:
        return presets[value]
    try:
        f = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"scale must be 'desk', 'full' or a positive number, got {value!r}")
    if f <= 0:
        raise argparse.ArgumentTypeError("scale must be positive")
    return f


def _output_path(args, default_name: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUTPUT_ENV, ".")) / default_name


def _scaled(n: int, factor: float) -> int:
    return max(1, int(round(n * factor)))


# ---------------------------------------------------------------------------
# analyze


def cmd_analyze(args) -> int:
    rows = []
    if args.mu is not None:
        for k in range(1, args.k_max + 1):
            bound = analytics.exp_service_upper_bound(args.B, k, args.mu)
            rows.append({"k": k, "service_upper_bound": bound, "throughput_lower_bound": args.B / bound})
        header = f"B={args.B}, Exp(mu={args.mu}), H_B={harmonic(args.B):.6f}, c_max={args.B * args.mu:.6f}"
    else:
        lo, hi = args.l_min, args.l_max
        cap = analytics.c_max(args.B, lo, hi)
        for k in range(1, args.k_max + 1):
            row = {
                "k": k,
                "service_time": analytics.expected_service_time_k(args.B, k, lo, hi),
                "throughput": analytics.throughput_k(args.B, k, lo, hi),
                "fraction_of_c_max": analytics.throughput_k(args.B, k, lo, hi) / cap,
            }
            if args.lam is not None:
                row["latency"] = analytics.expected_latency(args.B, k, lo, hi, args.lam)
            rows.append(row)
        header = f"B={args.B}, U[{lo}, {hi}], c_max={cap:.6f}"
        if args.epsilon is not None:
            for eps in args.epsilon:
                header += f"\nmin bins for c_max - {eps:g}: {analytics.min_bins_for_throughput(args.B, lo, hi, eps)}"

    print(header)
    cols = list(rows[0])
    print("  ".join(f"{c:>22}" for c in cols))
    for r in rows:
        print("  ".join(f"{r[c]:>22.6f}" if isinstance(r[c], float) else f"{r[c]:>22}" for c in cols))
    if args.out:
        write_csv(rows, args.out, cols)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def _simulate_params(args) -> dict:
    params = json.loads(Path(args.config).read_text()) if args.config else {}
    overrides = {
        "lambda": args.lam, "n_requests": args.n, "B": args.B, "k": args.k,
        "n_servers": args.servers, "p_e": args.p_e, "max_batch_wait": args.max_wait,
    }
    params.update({k: v for k, v in overrides.items() if v is not None})
    if args.mu is not None:
        params["service"] = {"type": "exponential", "mu": args.mu}
    elif args.trace:
        params["service"] = {"type": "trace", "path": args.trace, "slope": args.slope, "intercept": args.intercept}
    elif args.l_min is not None or args.l_max is not None:
        params["service"] = {"type": "uniform", "l_min": args.l_min or 1.0, "l_max": args.l_max or 20.0}
    if args.confusion:
        params["error"] = {"type": "confusion", "path": args.confusion}
    if args.no_flush:
        params["flush_partial"] = False
    params = resolve_params(params, {})
    params["n_requests"] = _scaled(int(params["n_requests"]), args.scale)
    return params


def cmd_simulate(args) -> int:
    params = _simulate_params(args)
    cfg = build_sim_config(params, args.seed)
    run = simulate(cfg)
    if args.records:
        run.write_jsonl(args.records)
    out = {
        "params": params,
        "seed": args.seed,
        "metrics": run.metrics.as_dict(),
        "analytic": analytic_columns(params, cfg.service),
    }
    text = json.dumps(out, indent=2, sort_keys=True, default=str)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep / compare / fit


def cmd_sweep(args) -> int:
    if bool(args.spec) == bool(args.preset):
        raise UsageError("give exactly one of --spec or --preset")
    if args.preset:
        spec = ExperimentSpec.from_dict(PRESETS[args.preset])
        base_dir = Path(".")
    else:
        spec = ExperimentSpec.load(args.spec)
        base_dir = Path(args.spec).parent
    spec.seed = args.seed
    if args.replications:
        spec.replications = args.replications
    spec.base["n_requests"] = _scaled(int(spec.base.get("n_requests", DESK_REQUESTS)), args.scale)

    raw = [] if args.raw else None
    rows = run_experiment(spec, workers=args.workers, base_dir=base_dir, raw_rows=raw)
    path = Path(args.out) if args.out else (
        Path(spec.output) if spec.output else _output_path(args, f"{spec.name}.csv")
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    write_csv(rows, path)
    if raw is not None:
        write_csv(raw, args.raw, RAW_COLUMNS)
    print(f"wrote {len(rows)} rows to {path}")
    return EXIT_OK


def cmd_compare(args) -> int:
    rows = read_csv(args.results)
    code = EXIT_OK
    for metric in args.metric:
        report = compare(rows, metric=metric, tolerance=args.tolerance)
        print(report.format())
        code = max(code, report.exit_code)
    return code


def cmd_fit(args) -> int:
    trace = load_trace(args.trace, args.format)
    model = fit_linear_model(trace)
    print(model.to_json())
    if args.out:
        model.save(args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def global_options(parser, suppress):
        # subcommands must not clobber values given before the subcommand name
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        parser.add_argument("--seed", type=int, default=d(0), help="master seed (default 0)")
        parser.add_argument("--out", default=d(None), help="output file")
        parser.add_argument("--scale", type=_scale_factor, default=d(1.0),
                            help="request-count multiplier: desk (12,800 requests), full (x10), or a number")
        parser.add_argument("-v", "--verbose", action="store_true", default=d(False))

    common = _Parser(add_help=False)
    global_options(common, suppress=True)

    p = _Parser(prog="multibin", description=__doc__.splitlines()[0])
    global_options(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", parents=[common], help="closed-form throughput/latency tables")
    a.add_argument("--B", type=int, default=128)
    a.add_argument("--l-min", type=float, default=1.0)
    a.add_argument("--l-max", type=float, default=20.0)
    a.add_argument("--mu", type=float, help="analyze exponential service with this rate instead")
    a.add_argument("--k-max", type=int, default=8)
    a.add_argument("--lambda", dest="lam", type=float)
    a.add_argument("--epsilon", type=float, nargs="+")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", parents=[common], help="single simulation run")
    s.add_argument("--config", help="JSON document with simulation parameters")
    s.add_argument("--lambda", dest="lam", help="arrival rate, or 'inf' for all-at-once arrivals")
    s.add_argument("--n", type=int, help="number of requests (before --scale)")
    s.add_argument("--B", type=int)
    s.add_argument("--k", type=int)
    s.add_argument("--servers", type=int)
    s.add_argument("--l-min", type=float)
    s.add_argument("--l-max", type=float)
    s.add_argument("--mu", type=float)
    s.add_argument("--trace", help="CSV/JSONL token trace; times via --slope/--intercept")
    s.add_argument("--slope", type=float, default=1.0)
    s.add_argument("--intercept", type=float, default=0.0)
    s.add_argument("--p-e", type=float, help="symmetric bin-prediction error probability")
    s.add_argument("--confusion", help="confusion-matrix file for bin prediction")
    s.add_argument("--max-wait", type=float, help="dispatch partial batches after this wait")
    s.add_argument("--no-flush", action="store_true", help="leave partial batches unserved at the end")
    s.add_argument("--records", help="write per-request JSON-lines records here")
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", parents=[common], help="run an experiment spec")
    w.add_argument("--spec", help="experiment spec JSON")
    w.add_argument("--preset", choices=sorted(PRESETS))
    w.add_argument("--replications", type=int)
    w.add_argument("--workers", type=int, default=1)
    w.add_argument("--raw", help="also write per-seed rows to this CSV")
    w.set_defaults(func=cmd_sweep)

    c = sub.add_parser("compare", parents=[common], help="check measured columns against formulas")
    c.add_argument("results", help="CSV written by sweep")
    c.add_argument("--metric", choices=["throughput", "latency"], nargs="+", default=["throughput"])
    c.add_argument("--tolerance", type=float, default=0.02)
    c.set_defaults(func=cmd_compare)

    f = sub.add_parser("fit", parents=[common], help="fit the linear token-to-time model")
    f.add_argument("trace")
    f.add_argument("--format", choices=["csv", "jsonl"])
    f.set_defaults(func=cmd_fit)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ValueError, OSError, KeyError, RuntimeError) as exc:
        print(f"multibin: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

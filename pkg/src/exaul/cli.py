"""Command-line entry point: ``exaul {gen-pool, run, audit}``.

Exit codes: 0 success, 1 audit failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .environments import CALIBRATIONS, KINDS, PoolFormatError, Schedule, gen_pool, load_pool, save_pool
from .harness import ExperimentConfig, aggregate_csv, audit_run, run_experiment

ALGO_CHOICES = ("exaul", "exp3ix-ca", "ew-ca", "no-ca")
TWO_POOL = {"shift-single", "shift-alternating", "shift-gradual", "adversary"}


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _unit_interval(text):
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"expected a value in (0, 1), got {text}")
    return v


def _lambda(text):
    if text.strip().lower() == "sqrtt":
        return "sqrtT"
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"lambda must be >= 0 or 'sqrtT', got {text}")
    return v


def _seed(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="exaul",
        description="Online conformal abstention with bandit feedback: simulate and audit.",
        formatter_class=fmt,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{gen-pool,run,audit}")

    g = sub.add_parser("gen-pool", help="write a synthetic score,correct pool", formatter_class=fmt)
    g.add_argument("--n", type=_positive_int, default=10000, help="number of entries")
    g.add_argument("--seed", type=_seed, default=0, help="generator seed")
    g.add_argument("--calibration", choices=CALIBRATIONS, default="well", help="score calibration")
    g.add_argument("--incorrect-rate", type=_unit_interval, default=0.3, help="expected error rate")
    g.add_argument("--concentration", type=float, default=2.0, help="Beta a+b of the score distribution")
    g.add_argument("--out", required=True, help="output CSV path")

    r = sub.add_parser("run", help="run a seeded multi-trial experiment", formatter_class=fmt)
    r.add_argument("--algo", choices=ALGO_CHOICES, default="exaul", help="learner")
    r.add_argument("--env", choices=KINDS, default="stochastic", help="environment")
    r.add_argument("--pool", required=True, help="pool CSV (score,correct)")
    r.add_argument("--pool2", default=None, help="second pool CSV for shift and adversary environments")
    r.add_argument("--T", type=_positive_int, default=30000, help="horizon")
    r.add_argument("--alpha", type=_unit_interval, default=0.05, help="target FDR")
    r.add_argument("--lambda", dest="lam", type=_lambda, default="sqrtT", help="trade-off weight or sqrtT")
    r.add_argument("--grid-size", type=int, default=1000, help="number of thresholds")
    r.add_argument("--trials", type=_positive_int, default=1, help="number of trials")
    r.add_argument("--seed", type=_seed, default=0, help="base seed (u64)")
    r.add_argument("--log-every", type=_positive_int, default=10, help="step-log stride")
    r.add_argument("--delta", type=_unit_interval, default=0.01, help="failure probability for bound checks")
    r.add_argument("--out", default="results", help="output directory")
    r.add_argument("--switch", type=_positive_int, default=None, help="shift-single switch round (default T/2)")
    r.add_argument("--chunk", type=_positive_int, default=3000, help="shift-alternating chunk length")
    r.add_argument("--phase-switch", type=_positive_int, default=None, help="adversary phase switch (default T/5)")
    r.add_argument("--window", type=_positive_int, default=500, help="adversary adaptation window")
    r.add_argument("--workers", type=_positive_int, default=1, help="worker processes for trials")

    a = sub.add_parser("audit", help="re-check a run directory", formatter_class=fmt)
    a.add_argument("--run", required=True, help="run directory written by 'run'")
    return parser


def _load(parser, path):
    try:
        return load_pool(path)
    except FileNotFoundError:
        parser.error(f"pool file not found: {path}")
    except PoolFormatError as exc:
        parser.error(str(exc))


def config_from_args(parser, args) -> ExperimentConfig:
    if args.grid_size < 2:
        parser.error("--grid-size must be >= 2")
    if args.env in TWO_POOL and args.pool2 is None:
        parser.error(f"--env {args.env} requires --pool2")
    pools = [_load(parser, args.pool)]
    if args.pool2 is not None:
        pools.append(_load(parser, args.pool2))
    schedule = Schedule(
        args.env,
        tuple(pools),
        chunk=args.chunk,
        switch_point=args.switch,
        phase_switch=args.phase_switch,
        window=args.window,
    )
    return ExperimentConfig(
        algo=args.algo,
        schedule=schedule,
        alpha=args.alpha,
        lam=args.lam,
        grid_size=args.grid_size,
        horizon=args.T,
        trials=args.trials,
        base_seed=args.seed,
        log_every=args.log_every,
        output_dir=args.out,
        delta=args.delta,
    )


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    if args.command == "gen-pool":
        pool = gen_pool(args.n, args.seed, args.calibration, args.incorrect_rate, args.concentration)
        save_pool(pool, args.out)
        print(f"wrote {len(pool)} entries to {args.out} (error rate {pool.error_rate:.4f})")
        return 0

    if args.command == "run":
        config = config_from_args(parser, args)
        try:
            summary = run_experiment(config, workers=args.workers)
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(aggregate_csv(summary.stats), end="")
        for k, v in summary.pass_rates.items():
            print(f"pass_rate.{k}={v:.17g}")
        if not summary.ok:
            for res in summary.results:
                for line in res.audit.violations():
                    print(f"trial {res.trial}: {line}", file=sys.stderr)
            return 1
        return 0

    ok, violations, report = audit_run(args.run)
    print(report, end="")
    for line in violations:
        print(f"VIOLATION {line}", file=sys.stderr)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())

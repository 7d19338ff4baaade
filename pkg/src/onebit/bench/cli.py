"""``bench`` command line.

    bench run --preset fig4a --trials 100 --seed 42 --out results.csv
    bench run --json-config run.json
    bench validate-fvp --set sparse --m-prime 10000

The worker count comes from ``--workers`` or ``$ONEBIT_WORKERS``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .. import analysis as an
from .presets import ExperimentConfig, effective_params, preset_names
from .runner import FVP_SETS, WORKERS_ENV, run_experiment, summary_path, validate_fvp

__all__ = ["build_parser", "main"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description="One-bit recovery benchmarks.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a preset and write per-trial CSV")
    run.add_argument("--json-config", help="JSON file mirroring ExperimentConfig")
    run.add_argument("--preset", choices=preset_names())
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--noise-sigma", type=float)
    run.add_argument("--solver", help="single solver arm (custom preset)")
    run.add_argument("--log-base", type=float, help="fig3a oversampling grid base (default 2)")
    run.add_argument("--workers", type=int, help=f"worker processes (default ${WORKERS_ENV} or 1)")
    run.add_argument("--out", help="per-trial CSV path")
    run.add_argument("--dump-params", action="store_true", help="print effective parameters and exit")

    fvp = sub.add_parser("validate-fvp", help="check the finite volume property empirically")
    fvp.add_argument("--set", dest="sig_set", choices=FVP_SETS, default="sparse")
    fvp.add_argument("--m-prime", type=int, default=10_000)
    fvp.add_argument("--model", choices=("gaussian", "dct"), default="gaussian")
    fvp.add_argument("--trials", type=int, default=20)
    fvp.add_argument("--seed", type=int, default=0)
    fvp.add_argument("--dim", type=int, default=100)
    fvp.add_argument("--sparsity", type=int, default=10)
    fvp.add_argument("--out", help="FvpReport CSV path")
    return parser


def _run_config(args) -> ExperimentConfig:
    data = {}
    if args.json_config:
        with open(args.json_config) as fh:
            data = json.load(fh)
    flags = {
        "preset": args.preset,
        "trials": args.trials,
        "seed": args.seed,
        "noise_sigma": args.noise_sigma,
        "solver": args.solver,
        "log_base": args.log_base,
        "workers": args.workers,
        "out": args.out,
    }
    # command-line flags win over the config file
    data.update({k: v for k, v in flags.items() if v is not None})
    if "preset" not in data:
        raise SystemExit("bench run: --preset or a config with 'preset' is required")
    return ExperimentConfig.from_dict(data)


def _cmd_run(args) -> int:
    try:
        cfg = _run_config(args)
        if args.dump_params:
            print(json.dumps(effective_params(cfg), indent=2, sort_keys=True))
            return 0
        table = run_experiment(cfg)
    except (ValueError, OSError) as exc:
        print(f"bench run: {exc}", file=sys.stderr)
        return 2
    print(table.format())
    if cfg.out:
        print(f"wrote {cfg.out} and {summary_path(cfg.out)}")
    if table.exit_code:
        print(f"bench run: {100 * table.abort_fraction:.1f}% of trial arms aborted", file=sys.stderr)
    return table.exit_code


def _cmd_fvp(args) -> int:
    try:
        reports = validate_fvp(
            args.sig_set, args.m_prime, trials=args.trials, seed=args.seed, kind=args.model,
            d=args.dim, sparsity=args.sparsity,
        )
    except ValueError as exc:
        print(f"bench validate-fvp: {exc}", file=sys.stderr)
        return 2
    dev = np.array([r.deviation for r in reports])
    print(f"set={args.sig_set} model={args.model} m'={args.m_prime} trials={len(reports)}")
    print(f"median deviation {np.median(dev):.4e}  max {dev.max():.4e}  (m')^-1/2 = {args.m_prime ** -0.5:.4e}")
    if args.out:
        an.write_reports_csv(reports, args.out)
        print(f"wrote {args.out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "run":
        return _cmd_run(args)
    return _cmd_fvp(args)


if __name__ == "__main__":
    sys.exit(main())

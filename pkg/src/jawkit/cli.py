"""Command-line entry point.

    jawkit [run] [--config FILE] [--dataset PATH|synthetic] [--methods ...] ...
    jawkit tune-lambda --config FILE [...]

Exit codes: 0 success, 1 some replicate aborted, 2 configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import harness

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2

# CLI flag -> config key; list-valued flags take several values
_FLAGS = (
    ("--dataset", "dataset", {}),
    ("--methods", "methods", {"nargs": "+"}),
    ("--alpha", "alpha", {}),
    ("--replicates", "replicates", {}),
    ("--train-size", "train_size", {}),
    ("--beta", "beta", {"nargs": "+"}),
    ("--weights", "weights", {"choices": ("oracle", "estimated")}),
    ("--predictor", "predictor", {"choices": ("ridge", "mlp", "constant-mean")}),
    ("--lambda", "lam", {}),
    ("--if-order", "if_order", {"nargs": "+"}),
    ("--cv-folds", "cv_folds", {}),
    ("--tau-grid", "tau_grid", {}),
    ("--out", "out", {}),
    ("--seed", "seed", {}),
    ("--workers", "workers", {}),
    ("--max-rows", "max_rows", {}),
    ("--test-points", "test_points", {}),
    ("--hidden-units", "hidden_units", {}),
    ("--epochs", "epochs", {}),
    ("--batch-size", "batch_size", {}),
    ("--learning-rate", "learning_rate", {}),
)


def _add_common(p):
    p.add_argument("--config", help="key=value configuration file; flags override it")
    for flag, dest, extra in _FLAGS:
        p.add_argument(flag, dest=dest, default=None, **extra)
    p.add_argument("--timing", action="store_true", default=None,
                   help="fill runtime_ms (output is then no longer byte-reproducible)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="jawkit", description="Weighted jackknife+ benchmark harness.")
    sub = parser.add_subparsers(dest="command")
    _add_common(sub.add_parser("run", help="run replicated experiments (default)"))
    tune = sub.add_parser("tune-lambda", help="grid-search the penalty on IF-1 jackknife+ coverage")
    _add_common(tune)
    tune.add_argument("--write", action="store_true",
                      help="append the chosen lambda to the --config file")
    return parser


def _load(args):
    text = None
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    overrides = {dest: getattr(args, dest) for _, dest, _ in _FLAGS}
    overrides["timing"] = args.timing
    return harness.build_config(text, overrides)


def _write(text, out):
    if out in ("-", ""):
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] not in ("run", "tune-lambda", "-h", "--help"):
        argv.insert(0, "run")
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
        if args.command == "tune-lambda":
            return _tune(cfg, args)
        table = harness.run_experiment(cfg)
    except (harness.ConfigError, harness.EmptyDatasetError, OSError, ValueError) as exc:
        print(f"jawkit: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _write(table.to_csv(), cfg.out)
    if table.failed_replicates:
        print(f"jawkit: {len(table.failed_replicates)} replicate(s) aborted: "
              f"{table.failed_replicates}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _tune(cfg, args):
    chosen, history = harness.tune_lambda(cfg)
    lines = ["lambda,coverage"] + [f"{lam:g},{cov:.6g}" for lam, cov in history]
    _write("\n".join(lines) + "\n", cfg.out)
    if chosen is None:
        print(f"jawkit: no lambda reached coverage {harness.TUNE_THRESHOLD}", file=sys.stderr)
        return EXIT_PARTIAL
    if args.write:
        if not args.config:
            raise harness.ConfigError("--write needs --config")
        with open(args.config, "a", encoding="utf-8") as fh:
            fh.write(f"\nlambda = {chosen:g}\n")
    print(f"lambda = {chosen:g}", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

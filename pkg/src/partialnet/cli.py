"""Command line entry point.

Exit codes: 0 success, 1 check failure, 2 config error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import contextlib
import sys

from threadpoolctl import threadpool_limits

from . import config as C
from . import runner
from .gradcheck import THRESHOLD, run_suite
from .optim import NumericError

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file with dotted keys")
    common.add_argument("--out", help="output directory (overrides 'out')")
    common.add_argument("--seed", type=int, help="run seed (overrides 'seed')")
    common.add_argument("--reference", action="store_true",
                        help="single-threaded, byte-deterministic mode (wall_time recorded as 0)")

    p = argparse.ArgumentParser(prog="partialnet", description="Train networks with most weights fixed.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train one partially-learned model")
    sub.add_parser("count", parents=[common], help="total and effective parameter counts")
    sub.add_parser("ensemble", parents=[common], help="train a shared-backbone ensemble")
    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every op")
    g.add_argument("--probes", type=int, default=10)
    sub.add_parser("sweep", parents=[common], help="train over a sweep axis and fit accuracy vs log fraction")
    return p


def _load(args):
    if not args.config:
        raise C.ConfigError("--config", "required for this command")
    overrides = {}
    if args.out is not None:
        overrides["out"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    return C.load(args.config, overrides)


def _gradcheck(probes) -> int:
    results = run_suite(probes=probes)
    failed = []
    for name, err in results.items():
        ok = err < THRESHOLD
        print(f"{name:24s} {err:.3e}  {'ok' if ok else 'FAIL'}")
        if not ok:
            failed.append(name)
    if failed:
        print(f"gradient check failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def run(args) -> int:
    if args.command == "gradcheck":
        return _gradcheck(args.probes)
    cfg = _load(args)
    if args.command == "count":
        total, effective = runner.cmd_count(cfg)
        print(f"architecture     {cfg.arch.label} ({cfg.arch.num_classes} classes)")
        print(f"partition        {cfg.partition.describe()}")
        print(f"total_params     {total}")
        print(f"effective_params {effective}")
        return EXIT_OK
    if args.command == "train":
        acc = runner.cmd_train(cfg, args.reference)
        print(f"final top-1 accuracy: {acc:.4f}")
    elif args.command == "ensemble":
        rep = runner.cmd_ensemble(cfg, args.reference)
        print(f"{rep.kind}: stored {rep.stored_params} params, mean accuracy {rep.mean_accuracy:.4f}, "
              f"ensemble accuracy {rep.ensemble_accuracy:.4f}")
    elif args.command == "sweep":
        if cfg.sweep is None:
            raise C.ConfigError("sweep.axis", "sweep needs a sweep axis")
        rows = runner.cmd_sweep(cfg, args.reference)
        for r in rows:
            if r["kind"] == "point":
                print(f"{r['partition']:32s} {r['fixed_mode']:6s} eff={r['effective_params']:<9d} "
                      f"mean_acc={r['mean_acc']:.4f}")
            else:
                print(f"fit[{r['fixed_mode']}] acc = {r['fit_slope']:.4f} ln(f) + {r['fit_intercept']:.4f} "
                      f"(residual {r['fit_residual']:.3g})")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    limits = threadpool_limits(1) if args.reference else contextlib.nullcontext()
    try:
        with limits:
            return run(args)
    except C.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())

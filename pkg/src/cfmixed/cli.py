"""Command line entry point: ``run``, ``sweep`` and ``validate``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import SWEEP_PARAMETERS, ConfigError, load_config


def _parser():
    p = argparse.ArgumentParser(prog="cfmixed", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, help="override base_seed")
    run.add_argument("--drops", type=int, help="override num_drops")
    run.add_argument("--out", help="output directory (default: output_path)")
    run.add_argument("--workers", type=int, default=1)

    sw = sub.add_parser("sweep", help="run one experiment per parameter value")
    sw.add_argument("--config", required=True)
    sw.add_argument("--param", required=True, choices=SWEEP_PARAMETERS)
    sw.add_argument("--values", required=True, help="comma separated, e.g. 2,4,6")
    sw.add_argument("--seed", type=int)
    sw.add_argument("--drops", type=int)
    sw.add_argument("--out")
    sw.add_argument("--workers", type=int, default=1)

    val = sub.add_parser("validate", help="check a config file and exit")
    val.add_argument("--config", required=True)
    return p


def _overrides(cfg, args):
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["base_seed"] = args.seed
    if getattr(args, "drops", None) is not None:
        changes["num_drops"] = args.drops
    if not changes:
        return cfg
    try:
        return cfg.replace(**changes)
    except ValueError as exc:
        raise ConfigError(f"command line: {exc}") from None


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = _overrides(load_config(args.config), args)
        if args.command == "validate":
            print(f"{args.config}: ok")
            return 0
        # deferred: numpy-heavy imports are not needed for validation
        from .harness import run_experiment, sweep
        if args.command == "run":
            out = run_experiment(cfg, args.out, args.workers)
            for row in out["summary"]:
                print(f"{row['scheme']:>6} {row['precoder']:>6} {row['clusterer']:>9}"
                      f"  median sum-SE {row['median']:.3f}")
            return 0
        try:
            values = [float(v) if "." in v else int(v) for v in args.values.split(",") if v]
        except ValueError:
            raise ConfigError(f"--values: cannot parse {args.values!r}") from None
        out = sweep(cfg, args.param, values, args.out, args.workers)
        print(out["path"])
        return 0
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

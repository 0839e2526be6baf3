#!/usr/bin/env python3
"""
chartkit - channel charting from CSI
Entry point: parses the command line and dispatches to the pipeline commands.
"""

import argparse
import logging
import os
import sys

# Add project root to Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from core.config import RunConfig, config_keys, flag_name, key_help
from core.errors import ChartError
from core import pipeline

log = logging.getLogger("chartkit")


def _add_config_flags(parser):
    parser.add_argument("--config", help="flat key = value run configuration file")
    parser.add_argument("--threads", type=int, default=1, help="worker thread cap")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    group = parser.add_argument_group("configuration keys")
    for key in config_keys():
        group.add_argument(flag_name(key), dest=f"key_{key}", metavar="VALUE", help=key_help(key))


def build_parser():
    parser = argparse.ArgumentParser(prog="chartkit", description="Channel charting from CSI")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a CCD1 dataset")
    _add_config_flags(p)
    p.add_argument("--out", default="dataset.ccd", help="output dataset file")

    p = sub.add_parser("featurize", help="write feature vectors as CSV")
    _add_config_flags(p)
    p.add_argument("dataset")
    p.add_argument("--out", default="features.csv")

    p = sub.add_parser("train", help="train a chart model")
    _add_config_flags(p)
    p.add_argument("dataset")
    p.add_argument("--out-dir", default="run")
    p.add_argument("--export-triplets", action="store_true",
                   help="also write the triplet and inertial sets as CSV")

    p = sub.add_parser("evaluate", help="embed a dataset and score the chart")
    _add_config_flags(p)
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--out-dir", default="run")

    p = sub.add_parser("compare", help="train and evaluate several run configs")
    _add_config_flags(p)
    p.add_argument("configs", nargs="+", help="run configuration files")
    p.add_argument("--dataset", help="shared dataset (generated from the first config if omitted)")
    p.add_argument("--out-dir", default="compare")
    return parser


def _overrides(args):
    values = {}
    for key in config_keys():
        value = getattr(args, f"key_{key}", None)
        if value is not None:
            values[key] = value
    return values


def _run_config(args):
    overrides = _overrides(args)
    if args.config:
        return RunConfig.from_file(args.config, overrides)
    return RunConfig.from_strings(overrides)


def run(argv=None):
    """Parse argv and run one command; returns the process exit code."""
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        # bad command line counts as a configuration error; --help exits 0
        return 0 if e.code in (0, None) else 1
    logging.getLogger().setLevel(logging.DEBUG if args.verbose else logging.INFO)

    try:
        if args.command == "compare":
            runs = pipeline.load_runs(args.configs, _overrides(args))
            rows = pipeline.cmd_compare(runs, args.out_dir, args.dataset, args.threads)
            print(pipeline.format_table(rows), end="")
            return 0

        cfg = _run_config(args)
        if args.command == "generate":
            s = pipeline.cmd_generate(cfg, args.out)
            print(f"N={s['n_samples']} B={s['n_antennas']} W={s['n_subcarriers']} "
                  f"duration={s['duration_s']:.1f}s -> {s['path']}")
        elif args.command == "featurize":
            pipeline.cmd_featurize(cfg, args.dataset, args.out, args.threads)
        elif args.command == "train":
            result = pipeline.cmd_train(cfg, args.dataset, args.out_dir, args.threads,
                                        args.export_triplets)
            print(f"final loss {result.history[-1].mean_loss:.6g} -> {result.checkpoint}")
        elif args.command == "evaluate":
            _, report = pipeline.cmd_evaluate(cfg, args.checkpoint, args.dataset,
                                              args.out_dir, args.threads)
            if report is not None:
                print(f"KS={report.ks:.4f} SR={report.sr:.4f}")
    except ChartError as e:
        log.error("%s: %s", type(e).__name__, e)
        return e.exit_code
    except Exception:
        log.exception("Unexpected failure")
        return 2
    return 0


def main():
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s [%(name)s] %(levelname)s: %(message)s",
    )
    sys.exit(run())


if __name__ == "__main__":
    main()

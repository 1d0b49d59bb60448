"""Command-line entry point.

Subcommands: ingest (parse + window + split into a cache), train (federated
training for one method), compare (accuracy/energy/WSP report over the three
trained methods), inspect (describe one recording file).

Exit codes: 0 success, 1 configuration/usage error, 2 data error (missing or
malformed files), 3 unexpected runtime failure. The dataset root in the
config can be overridden by FEDSPIKE_DATA_ROOT or --data-root.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import traceback

from .config import ConfigError, load_config
from .dataset import DataError
from .edf import EdfError, describe, parse_edf
from .experiment import generate_synthetic, run_compare, run_ingest, train_method

DATA_ROOT_ENV = "FEDSPIKE_DATA_ROOT"

log = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are validation errors: exit 1
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fedspike",
                     description="Federated SNN/CNN/LSTM benchmarking for "
                                 "EEG motor imagery.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("-c", "--config", required=True,
                       help="JSON experiment config file")
        p.add_argument("--data-root",
                       help=f"override the dataset directory (also: "
                            f"{DATA_ROOT_ENV})")
        p.add_argument("--out-dir", help="override the output directory")
        p.add_argument("--seed", type=int, help="override the master seed")

    p_ingest = sub.add_parser("ingest",
                              help="parse recordings into a normalized, "
                                   "split, cached dataset")
    add_config_args(p_ingest)
    p_ingest.add_argument("--synthetic", action="store_true",
                          help="first generate seeded surrogate recordings "
                               "into the dataset directory")
    p_ingest.set_defaults(func=cmd_ingest)

    p_train = sub.add_parser("train",
                             help="federated training for one method")
    add_config_args(p_train)
    p_train.add_argument("--method", required=True,
                         choices=("snn", "cnn", "lstm"))
    p_train.add_argument("--rounds", type=int,
                         help="override the federated round count")
    p_train.set_defaults(func=cmd_train)

    p_cmp = sub.add_parser("compare",
                           help="accuracy/energy/WSP report over the three "
                                "trained methods")
    add_config_args(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    p_inspect = sub.add_parser("inspect", help="describe one recording file")
    p_inspect.add_argument("path", help="EDF/EDF+ file")
    p_inspect.set_defaults(func=cmd_inspect)

    return parser


def _config_from_args(args):
    overrides = {"data_root": getattr(args, "data_root", None)
                 or os.environ.get(DATA_ROOT_ENV),
                 "out_dir": getattr(args, "out_dir", None),
                 "seed": getattr(args, "seed", None)}
    cfg = load_config(args.config, overrides)
    rounds = getattr(args, "rounds", None)
    if rounds is not None:
        if rounds < 1:
            raise ConfigError(f"--rounds must be >= 1, got {rounds}")
        cfg = dataclasses.replace(cfg, rounds=rounds)
    return cfg


def cmd_ingest(args) -> int:
    cfg = _config_from_args(args)
    if args.synthetic:
        generate_synthetic(cfg)
    summary = run_ingest(cfg)
    print(f"ingested {summary['n_train']} train / {summary['n_test']} test "
          f"examples from {len(summary['subjects'])} subject(s)")
    for subj in summary["subjects"]:
        per_class = summary["counts"][subj]
        parts = [f"{name}: {c['train']}+{c['test']}"
                 for name, c in per_class.items()]
        print(f"  {subj}  " + "  ".join(parts))
    print(f"source digest {summary['source_digest']}")
    print(f"cache digest  {summary['cache_digest']}")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    summary = train_method(cfg, args.method)
    print(f"{summary['method']}: {summary['rounds']} rounds, final test "
          f"accuracy {summary['final_test_accuracy']:.4f}")
    print(f"metrics    {summary['metrics']}")
    print(f"checkpoint {summary['checkpoint']}")
    return 0


def cmd_compare(args) -> int:
    cfg = _config_from_args(args)
    summary = run_compare(cfg)
    print(summary["text"], end="")
    for name, path in summary["files"].items():
        print(f"{name}: {path}")
    return 0


def cmd_inspect(args) -> int:
    with open(args.path, "rb") as f:
        data = f.read()
    try:
        rec = parse_edf(data)
    except EdfError as e:
        err = EdfError(f"{args.path}: {e}")
        err.offset = e.offset
        raise err from None
    print(describe(rec))
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (EdfError, DataError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        raise
    except Exception as e:
        traceback.print_exc()
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

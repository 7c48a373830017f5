"""Command-line entry point.

    wgtomo SUBCOMMAND [--config PATH] [--out DIR] [--dn-cache-dir DIR]
                      [--workers N] [--seed S] [--all-directions]

Subcommands: forward, dn, cgo-decay, carleman, extract, reconstruct,
stability, all.  Without --config the built-in defaults run a small
desk-scale experiment.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import ConfigError
from .harness import SUBCOMMANDS, merge_config, run


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wgtomo", description=__doc__)
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", help="JSON config file (defaults used if omitted)")
    p.add_argument("--out", default="wgtomo-out", help="output directory")
    p.add_argument("--dn-cache-dir", default=None,
                   help="directory for content-addressed DN matrices")
    p.add_argument("--workers", type=int, default=None,
                   help="worker threads for lattice sweeps")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--all-directions", action="store_true",
                   help="cover every lattice point with full-boundary data")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")

    user = {}
    if args.config:
        try:
            with open(args.config) as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read config {args.config}: {exc}",
                  file=sys.stderr)
            return 2
    cfg = merge_config(user)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.workers is not None:
        cfg["workers"] = args.workers
    if args.all_directions:
        cfg["reconstruction"]["all_directions"] = True
        cfg["reconstruction"]["data_mode"] = "full"

    try:
        summary = run(args.subcommand, cfg, args.out, args.dn_cache_dir)
    except ConfigError as exc:
        print("configuration invalid:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return 2
    print(json.dumps(summary, sort_keys=True, indent=1, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())

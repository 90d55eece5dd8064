#!/usr/bin/env python3
"""Run the full synth -> caption -> shard -> train -> eval pipeline.

Thin wrapper over `litforge pipeline`; handy when the console script is not
on PATH. All artifacts land in --out; see run_report.json for the summary.
"""

import argparse
import sys

from litforge.cli import main as litforge_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=None, help="pipeline config JSON (defaults apply if omitted)")
    parser.add_argument("--out", default="runs/default", help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override the global seed")
    args = parser.parse_args()

    argv = ["pipeline", "--out", args.out]
    if args.config is not None:
        argv += ["--config", args.config]
    if args.seed is not None:
        argv += ["--seed", str(args.seed)]
    return litforge_main(argv)


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""Run the weight-family sweep and write the CSV table + JSON summary.

Equivalent to `python -m bergmanlab.cli sweep`, with progress on stderr.
"""
import argparse
import sys

from bergmanlab import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=None, help="configuration file")
    ap.add_argument("--csv", default=None, help="output CSV path")
    ap.add_argument("--json", default=None, help="output JSON summary path")
    args = ap.parse_args()

    argv = ["sweep", "--progress"]
    if args.config:
        argv += ["--config", args.config]
    if args.csv:
        argv += ["--out", args.csv]
    if args.json:
        argv += ["--json", args.json]
    return cli.main(argv)


if __name__ == "__main__":
    sys.exit(main())

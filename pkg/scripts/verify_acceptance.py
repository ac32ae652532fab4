#!/usr/bin/env python3
"""Run the acceptance suite (all twelve criteria) and print one line each.

The sweep-backed criteria share one sweep run and its refined reruns, so
the whole suite costs roughly one default sweep plus the disc rerun at
doubled resolution.  Expect on the order of an hour end to end.
"""
import argparse
import sys

from bergmanlab import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=None, help="configuration file")
    ap.add_argument("--criteria", default=None,
                    help="comma-separated criterion numbers (default: all)")
    ap.add_argument("--out", default=None, help="JSON report path")
    args = ap.parse_args()

    argv = ["verify"]
    if args.config:
        argv += ["--config", args.config]
    if args.criteria:
        argv += ["--criteria", args.criteria]
    if args.out:
        argv += ["--out", args.out]
    return cli.main(argv)


if __name__ == "__main__":
    sys.exit(main())

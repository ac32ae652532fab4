#!/usr/bin/env python3
"""Build and verify the dyadic structure caches for both geometries.

The ball construction (greedy nets over the boundary sample) is the only
expensive part; caching it keeps repeated sweeps fast.
"""
import argparse
import sys

from bergmanlab import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="caches", help="cache directory")
    ap.add_argument("--disc-levels", type=int, default=8)
    ap.add_argument("--ball-levels", type=int, default=3)
    ap.add_argument("--config", default=None)
    args = ap.parse_args()

    for geom, levels in (("disc", args.disc_levels),
                         ("ball2", args.ball_levels)):
        argv = ["dyadic", "build", "--geom", geom, "--levels", str(levels),
                "--out", args.out]
        if args.config:
            argv += ["--config", args.config]
        rc = cli.main(argv)
        if rc:
            return rc
        check = ["dyadic", "check", "--geom", geom, "--out", args.out]
        if args.config:
            check += ["--config", args.config]
        rc = cli.main(check)
        if rc:
            return rc
    return 0


if __name__ == "__main__":
    sys.exit(main())

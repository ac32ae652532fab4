"""Command-line interface: dyadic caches, constants, sweeps, verification.

Every subcommand prints one machine-parsable result line (``key = value``
pairs) on success.  Exit codes: 0 success, 1 usage error, 2 validation or
invariant failure, 3 numerical non-convergence.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import sys
import time
from dataclasses import dataclass, fields, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import domination, dyadic, harness, projection, weights
from .errors import (
    BergmanLabError,
    CacheError,
    ConfigError,
    IterationError,
    StaleCacheError,
)
from .geometry import make_geometry

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVALID = 2
EXIT_NO_CONVERGENCE = 3

DEFAULT_CONFIG = """\
[geometry]
kind = disc

[dyadic]
s = 2
delta = default
shifts = 0, 1/3, 2/3
disc_max_level = 8
ball_max_level = 3

[grid]
disc_radial = 64
disc_angular = 128
ball_radial = 25
ball_angular = 32
ball_pplus_radial = 12
ball_pplus_angular = 15
grading_octaves = 8
averaging_radial_order = 4

[projection]
disc_truncation = 96
ball_truncation = 24

[domination]
directions = 64
polys = 8
samples = 120

[sweep]
rh_tents = 10
square_fields = 4
corona_r_cap = 1000.0

[output]
csv = sweep.csv
json = summary.json
cache_dir = caches

[seeds]
master = 2026
directions = 11
"""


@dataclass(frozen=True)
class RunConfig:
    """Validated run parameters; every field has an embedded default."""

    kind: str = "disc"
    s: int = 2
    delta: float | None = None
    shifts: tuple = (0.0, 1.0 / 3.0, 2.0 / 3.0)
    disc_max_level: int = 8
    ball_max_level: int = 3
    disc_radial: int = 64
    disc_angular: int = 128
    ball_radial: int = 25
    ball_angular: int = 32
    ball_pplus_radial: int = 12
    ball_pplus_angular: int = 15
    grading_octaves: int = 8
    averaging_radial_order: int = 4
    disc_truncation: int = 96
    ball_truncation: int = 24
    directions: int = 64
    polys: int = 8
    samples: int = 120
    rh_tents: int = 10
    square_fields: int = 4
    corona_r_cap: float = 1000.0
    csv: str = "sweep.csv"
    json: str = "summary.json"
    cache_dir: str = "caches"
    master_seed: int = 2026
    direction_seed: int = 11
    rows: tuple = ()                 # () = the built-in default sweep

    def validate(self):
        if self.kind not in ("disc", "ball2"):
            raise ConfigError(f"geometry kind must be disc or ball2, got {self.kind!r}")
        if self.s < 2:
            raise ConfigError("branching factor s must be at least 2")
        if self.delta is not None and not 0.0 < self.delta < 1.0:
            raise ConfigError("delta must lie in (0, 1) or be 'default'")
        if any(not 0.0 <= t < 1.0 for t in self.shifts):
            raise ConfigError("shifts must lie in [0, 1)")
        if not 0 <= self.disc_max_level <= 24:
            raise ConfigError("disc_max_level must lie in [0, 24]")
        if not 0 <= self.ball_max_level <= 10:
            raise ConfigError("ball_max_level must lie in [0, 10]")
        for name in ("disc_radial", "disc_angular", "ball_radial", "ball_angular",
                     "ball_pplus_radial", "ball_pplus_angular"):
            if getattr(self, name) < 8:
                raise ConfigError(f"{name} must be at least 8")
        if self.grading_octaves < 1 or self.disc_radial % self.grading_octaves:
            raise ConfigError("disc_radial must be a multiple of grading_octaves")
        if self.averaging_radial_order < 2:
            raise ConfigError("averaging_radial_order must be at least 2")
        if self.disc_truncation < 1 or self.ball_truncation < 1:
            raise ConfigError("truncation degrees must be positive")
        if self.directions < 8:
            raise ConfigError("direction count must be at least 8")
        if min(self.polys, self.samples, self.rh_tents, self.square_fields) < 1:
            raise ConfigError("polys, samples, rh_tents, square_fields must be positive")
        if self.corona_r_cap <= 1.0:
            raise ConfigError("corona_r_cap must exceed 1")
        for name in ("csv", "json", "cache_dir"):
            if not getattr(self, name):
                raise ConfigError(f"output path {name} must not be empty")
        for row in self.rows:
            geometry, family, _, _, d = row
            if geometry not in ("disc", "ball2"):
                raise ConfigError(f"row geometry {geometry!r} unknown")
            if family not in harness.FAMILIES:
                raise ConfigError(f"row family {family!r} unknown")
            if int(d) < 1:
                raise ConfigError(f"row dimension {d} must be positive")
        return self

    def sweep_config(self):
        return harness.default_config(
            rows=self.rows or harness.default_rows(),
            disc_radial=self.disc_radial, disc_angular=self.disc_angular,
            disc_truncation=self.disc_truncation,
            disc_max_level=self.disc_max_level,
            ball_radial=self.ball_radial, ball_angular=self.ball_angular,
            ball_truncation=self.ball_truncation,
            ball_max_level=self.ball_max_level,
            ball_pplus_radial=self.ball_pplus_radial,
            ball_pplus_angular=self.ball_pplus_angular,
            radial_order=self.averaging_radial_order,
            n_directions=self.directions, n_domination_polys=self.polys,
            n_domination_samples=self.samples, n_rh_tents=self.rh_tents,
            n_square_fields=self.square_fields,
            corona_r_cap=self.corona_r_cap, seed=self.master_seed)

    def as_text(self):
        """Render back to config-file syntax (used by --print-config)."""
        shifts = ", ".join(str(Fraction(t).limit_denominator(1000))
                           for t in self.shifts)
        delta = "default" if self.delta is None else repr(self.delta)
        text = DEFAULT_CONFIG_TEMPLATE.format(
            kind=self.kind, s=self.s, delta=delta, shifts=shifts,
            **{f.name: getattr(self, f.name) for f in fields(self)
               if f.name not in ("kind", "s", "delta", "shifts", "rows")})
        if self.rows:
            lines = ["", "[rows]"]
            for i, (g, fam, p1, p2, d) in enumerate(self.rows):
                lines.append(f"row{i} = {g}, {fam}, {p1!r}, {p2!r}, {d}")
            text += "\n".join(lines) + "\n"
        return text


DEFAULT_CONFIG_TEMPLATE = """\
[geometry]
kind = {kind}

[dyadic]
s = {s}
delta = {delta}
shifts = {shifts}
disc_max_level = {disc_max_level}
ball_max_level = {ball_max_level}

[grid]
disc_radial = {disc_radial}
disc_angular = {disc_angular}
ball_radial = {ball_radial}
ball_angular = {ball_angular}
ball_pplus_radial = {ball_pplus_radial}
ball_pplus_angular = {ball_pplus_angular}
grading_octaves = {grading_octaves}
averaging_radial_order = {averaging_radial_order}

[projection]
disc_truncation = {disc_truncation}
ball_truncation = {ball_truncation}

[domination]
directions = {directions}
polys = {polys}
samples = {samples}

[sweep]
rh_tents = {rh_tents}
square_fields = {square_fields}
corona_r_cap = {corona_r_cap}

[output]
csv = {csv}
json = {json}
cache_dir = {cache_dir}

[seeds]
master = {master_seed}
directions = {direction_seed}
"""


def _parse_fraction(token):
    try:
        return float(Fraction(token.strip()))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"cannot parse shift {token!r}") from exc


def load_config(path=None):
    """Parse a config file over the embedded defaults; fail fast."""
    parser = configparser.ConfigParser()
    parser.read_string(DEFAULT_CONFIG)
    if path is not None:
        text = Path(path).read_text()  # missing file raises before parsing
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
    try:
        delta_raw = parser.get("dyadic", "delta").strip()
        cfg = RunConfig(
            kind=parser.get("geometry", "kind").strip(),
            s=parser.getint("dyadic", "s"),
            delta=None if delta_raw == "default" else float(delta_raw),
            shifts=tuple(_parse_fraction(t) for t in
                         parser.get("dyadic", "shifts").split(",")),
            disc_max_level=parser.getint("dyadic", "disc_max_level"),
            ball_max_level=parser.getint("dyadic", "ball_max_level"),
            disc_radial=parser.getint("grid", "disc_radial"),
            disc_angular=parser.getint("grid", "disc_angular"),
            ball_radial=parser.getint("grid", "ball_radial"),
            ball_angular=parser.getint("grid", "ball_angular"),
            ball_pplus_radial=parser.getint("grid", "ball_pplus_radial"),
            ball_pplus_angular=parser.getint("grid", "ball_pplus_angular"),
            grading_octaves=parser.getint("grid", "grading_octaves"),
            averaging_radial_order=parser.getint("grid", "averaging_radial_order"),
            disc_truncation=parser.getint("projection", "disc_truncation"),
            ball_truncation=parser.getint("projection", "ball_truncation"),
            directions=parser.getint("domination", "directions"),
            polys=parser.getint("domination", "polys"),
            samples=parser.getint("domination", "samples"),
            rh_tents=parser.getint("sweep", "rh_tents"),
            square_fields=parser.getint("sweep", "square_fields"),
            corona_r_cap=parser.getfloat("sweep", "corona_r_cap"),
            csv=parser.get("output", "csv"),
            json=parser.get("output", "json"),
            cache_dir=parser.get("output", "cache_dir"),
            master_seed=parser.getint("seeds", "master"),
            direction_seed=parser.getint("seeds", "directions"),
            rows=_parse_rows(parser),
        )
    except (configparser.Error, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    return cfg.validate()


def _parse_rows(parser):
    if not parser.has_section("rows"):
        return ()
    rows = []
    for _, raw in parser.items("rows"):
        parts = [t.strip() for t in raw.split(",")]
        if len(parts) != 5:
            raise ConfigError(
                f"row {raw!r} needs geometry, family, param1, param2, d")
        rows.append((parts[0], parts[1], float(parts[2]), float(parts[3]),
                     int(parts[4])))
    return tuple(rows)


# ---------------------------------------------------------------------------
# shared builders
# ---------------------------------------------------------------------------


def _family_for(config, kind, max_level=None):
    geom = make_geometry(kind)
    if kind == "disc":
        if max_level is None:
            max_level = config.disc_max_level
        return geom, dyadic.build_disc_family(
            geom, max_level=max_level, shifts=config.shifts, s=config.s)
    if max_level is None:
        max_level = config.ball_max_level
    sample = dyadic.make_ball2_sample(geom)
    return geom, dyadic.build_ball2_family(
        geom, sample, delta=config.delta, max_level=max_level, s=config.s)


def _cache_paths(cache_dir, family):
    root = Path(cache_dir)
    return [(root / (sys.label.replace(":", "_").replace("=", "") + ".npz"),
             sys) for sys in family.systems]


def _load_family(config, kind, cache_dir, levels=None):
    """Reassemble a family from per-system cache files."""
    root = Path(cache_dir)
    files = sorted(root.glob(f"{kind}_*.npz"))
    if not files:
        raise CacheError(
            f"no dyadic cache for geometry {kind!r} under {root}/; "
            f"run `dyadic build --geom {kind} --out {root}` first")
    base, cousins = [], []
    for path in files:
        sys_ = dyadic.load_system(path)
        if sys_.kind != kind or sys_.s != config.s:
            raise StaleCacheError(
                f"cache {path} was built for kind={sys_.kind} s={sys_.s}, "
                f"requested kind={kind} s={config.s}")
        (base if sys_.height_mult == 1.0 else cousins).append(sys_)
    if not base:
        raise CacheError(f"cache under {root}/ holds no base systems")
    if levels is not None and any(b.max_level != levels for b in base):
        have = sorted({b.max_level for b in base})
        raise StaleCacheError(
            f"cache under {root}/ was built at max_level {have}, "
            f"requested {levels}")
    return dyadic.AdjacentFamily(base[0].geom, base, cousins)


def _cached_family(config, kind):
    """Load the dyadic family for ``kind`` from the configured cache."""
    levels = config.disc_max_level if kind == "disc" else config.ball_max_level
    family = _load_family(config, kind, config.cache_dir, levels=levels)
    return family.geom, family


def _weight_for(args, config, kind):
    """Weight field from --weight/--alpha/--param2/--d flags."""
    fam = args.weight
    d = args.d
    if fam == "identity":
        spec = harness.WeightFamilySpec("scalar_power", d=d, geometry=kind)
        return harness.generate_weight(spec, (0.0,))
    if fam == "rotated_diagonal" and d < 2:
        d = 2
    spec = harness.WeightFamilySpec(fam, d=d, geometry=kind)
    params = (args.alpha,) if fam == "scalar_power" else (args.alpha, args.param2)
    return harness.generate_weight(spec, params)


def _emit(line, out=None):
    print(line)
    if out:
        Path(out).write_text(line + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_dyadic(args):
    config = load_config(getattr(args, "config", None))
    kind = args.geom or config.kind
    if args.s:
        config = replace(config, s=args.s).validate()
    if args.delta is not None:
        config = replace(config, delta=args.delta).validate()
    levels = args.levels
    if args.action == "build":
        _, family = _family_for(config, kind, max_level=levels)
        out = Path(args.out or config.cache_dir)
        out.mkdir(parents=True, exist_ok=True)
        for path, sys_ in _cache_paths(out, family):
            dyadic.save_system(sys_, path)
        print(f"built systems={len(family.systems)} geom={kind} "
              f"levels={family.base[0].max_level} out={out}")
        return EXIT_OK
    # check: verify a cache if one is named, else a freshly built family
    if args.out:
        family = _load_family(config, kind, args.out, levels=levels)
    else:
        _, family = _family_for(config, kind, max_level=levels)
    report = dyadic.verify_structure(family)
    print(f"check ok systems={report['systems']} "
          f"volume_defect={report['volume_defect']:.3g}")
    return EXIT_OK


def cmd_b2(args):
    config = load_config(getattr(args, "config", None))
    kind = args.geom or config.kind
    W = _weight_for(args, config, kind)
    geom, family = _cached_family(config, kind)
    agrid = projection.build_averaging_grid(
        geom, family, radial_order=config.averaging_radial_order)
    value = weights.b2_constant(W, agrid, family.systems)
    _emit(f"B2 = {value:.6f}", args.out)
    return EXIT_OK


def cmd_norm(args):
    config = load_config(getattr(args, "config", None))
    kind = args.geom or config.kind
    W = None if args.weight == "identity" and args.d == 1 \
        else _weight_for(args, config, kind)
    geom = make_geometry(kind)
    if kind == "disc":
        grid = projection.build_grid(geom, radial=config.disc_radial,
                                     angular=config.disc_angular,
                                     grading=config.grading_octaves)
        trunc = config.disc_truncation
    else:
        grid = projection.build_grid(geom, radial=config.ball_radial,
                                     angular=config.ball_angular)
        trunc = config.ball_truncation
    proj = projection.assemble_projection(geom, grid, truncation=trunc,
                                          kind=args.kind)
    value = projection.weighted_operator_norm(proj, W)
    _emit(f"norm = {float(value):.6f}", args.out)
    return EXIT_OK


def cmd_dominate(args):
    config = load_config(getattr(args, "config", None))
    kind = args.geom or config.kind
    geom, family = _cached_family(config, kind)
    agrid = projection.build_averaging_grid(
        geom, family, radial_order=config.averaging_radial_order)
    rng = np.random.default_rng(config.master_seed)
    dirs = domination.build_direction_set(2, args.directions or config.directions,
                                          seed=config.direction_seed)
    samples = domination.stratified_samples(
        family, args.samples or config.samples, rng)
    degree = 5 if kind == "disc" else 3
    per_sample = np.zeros(len(samples))
    for _ in range(args.polys or config.polys):
        f = domination.random_vector_polynomial(kind, 2, degree, rng)
        ev = domination.SparseEvaluator(family, agrid, f, dirs)
        per_sample = np.maximum(
            per_sample, domination.domination_ratios(ev, f, samples).max(axis=1))
    if args.out:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["sample", "re", "im0", "C"])
        for i, (z, c) in enumerate(zip(samples, per_sample)):
            z0 = z if np.ndim(z) == 0 else z[0]
            wr.writerow([i, f"{z0.real:.9g}", f"{z0.imag:.9g}", f"{c:.9g}"])
        Path(args.out).write_text(buf.getvalue())
    print(f"C = {per_sample.max():.6f}")
    return EXIT_OK


def cmd_sweep(args):
    config = load_config(getattr(args, "config", None))
    csv_path = args.out or config.csv
    json_path = args.json or config.json

    def show(row):
        print(f"  {row.geometry}:{row.family}({row.param1:g},{row.param2:g}) "
              f"{row.status} {row.seconds:.1f}s", file=sys.stderr)

    report = harness.run_sweep(config.sweep_config(),
                               progress=show if args.progress else None)
    report.to_csv(csv_path)
    report.to_json(json_path)
    n_ok = len(report.ok_rows)
    print(f"sweep rows={len(report.rows)} ok={n_ok} "
          f"failed={len(report.rows) - n_ok} csv={csv_path} json={json_path}")
    return EXIT_OK


def cmd_verify(args):
    from . import acceptance

    config = load_config(getattr(args, "config", None))
    only = None
    if args.criteria:
        try:
            only = sorted({int(t) for t in args.criteria.split(",")})
        except ValueError as exc:
            raise ConfigError(f"bad criteria list {args.criteria!r}") from exc
    results = acceptance.run_all(config, only=only, progress=True)
    if args.out:
        acceptance.write_report(results, args.out)
    n_pass = sum(r.passed for r in results)
    print(f"verify passed={n_pass} failed={len(results) - n_pass} "
          f"of={len(results)}")
    return EXIT_OK if n_pass == len(results) else EXIT_INVALID


# ---------------------------------------------------------------------------
# parser plumbing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage failures with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_weight_flags(p):
    p.add_argument("--weight", default="identity",
                   choices=("identity",) + harness.FAMILIES)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--param2", type=float, default=0.0,
                   help="second family parameter (beta, m, or seed)")
    p.add_argument("--d", type=int, default=1)


def build_parser():
    top = _Parser(prog="bergmanlab",
                  description="weighted Bergman projection laboratory")
    top.add_argument("--print-config", action="store_true",
                     help="print the effective configuration and exit")
    top.add_argument("--config", default=None, help="configuration file")
    sub = top.add_subparsers(dest="command")

    pd = sub.add_parser("dyadic", help="build or check dyadic structure caches")
    pd.add_argument("action", choices=("build", "check"))
    pd.add_argument("--geom", choices=("disc", "ball2"), default=None)
    pd.add_argument("--s", type=int, default=None)
    pd.add_argument("--delta", type=float, default=None)
    pd.add_argument("--levels", type=int, default=None)
    pd.add_argument("--out", default=None, help="cache directory")
    pd.add_argument("--config", default=argparse.SUPPRESS)
    pd.set_defaults(func=cmd_dyadic)

    pb = sub.add_parser("b2", help="Bekolle-Bonami constant of a weight")
    _add_weight_flags(pb)
    pb.add_argument("--geom", choices=("disc", "ball2"), default=None)
    pb.add_argument("--config", default=argparse.SUPPRESS)
    pb.add_argument("--out", default=None)
    pb.set_defaults(func=cmd_b2)

    pn = sub.add_parser("norm", help="weighted operator norm of P or P+")
    _add_weight_flags(pn)
    pn.add_argument("--geom", choices=("disc", "ball2"), default=None)
    pn.add_argument("--kind", choices=("P", "Pplus"), default="P")
    pn.add_argument("--config", default=argparse.SUPPRESS)
    pn.add_argument("--out", default=None)
    pn.set_defaults(func=cmd_norm)

    pm = sub.add_parser("dominate", help="sparse domination constant")
    pm.add_argument("--geom", choices=("disc", "ball2"), default=None)
    pm.add_argument("--polys", type=int, default=None)
    pm.add_argument("--samples", type=int, default=None)
    pm.add_argument("--directions", type=int, default=None)
    pm.add_argument("--config", default=argparse.SUPPRESS)
    pm.add_argument("--out", default=None, help="per-sample CSV path")
    pm.set_defaults(func=cmd_dominate)

    ps = sub.add_parser("sweep", help="run the weight-family sweep")
    ps.add_argument("--config", default=argparse.SUPPRESS)
    ps.add_argument("--out", default=None, help="CSV path")
    ps.add_argument("--json", default=None, help="JSON summary path")
    ps.add_argument("--progress", action="store_true")
    ps.set_defaults(func=cmd_sweep)

    pv = sub.add_parser("verify", help="run the acceptance suite")
    pv.add_argument("--config", default=argparse.SUPPRESS)
    pv.add_argument("--criteria", default=None,
                    help="comma-separated criterion numbers (default: all)")
    pv.add_argument("--out", default=None, help="JSON report path")
    pv.set_defaults(func=cmd_verify)
    return top


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_config:
        print(load_config(args.config).as_text(), end="")
        return EXIT_OK
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except IterationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except BergmanLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

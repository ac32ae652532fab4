"""Weight families, the parameter sweep, and end-to-end norm summaries.

The sweep measures, for each generated weight, the constants on both
sides of the chain

    ||P||_{L2(W)}  <=  sqrt(B2) * ||P||_{L2(tilde)}  <=  C * B2(W)^2,

together with the positive-kernel norm, the sparse domination constant,
reverse-Holder exponents of the step weights, and the S1/S2 square
functionals.  Rows are independent and deterministic for a fixed seed;
any validation or convergence error marks the row failed and the sweep
continues.
"""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import domination, dyadic, linalg, projection, weights
from .errors import (
    BergmanLabError,
    DataError,
    DomainParameterError,
    FitError,
)
from .geometry import make_geometry

CSV_COLUMNS = ("family", "param1", "param2", "d", "B2", "normW", "normTilde",
               "normPplusTilde", "transferRatio", "dominationC",
               "reverseHolderR", "s1Ratio", "s2Ratio", "gridR", "gridA",
               "truncN", "seconds")

FAMILIES = ("scalar_power", "diagonal_power", "rotated_diagonal",
            "random_log_field")


# ---------------------------------------------------------------------------
# weight families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightFamilySpec:
    family: str
    d: int = 1
    geometry: str = "disc"
    max_abs: float = 0.9


def _one_minus_sq(z, kind):
    z = np.asarray(z)
    if kind == "ball2":
        t = 1.0 - np.sum(np.abs(z) ** 2, axis=-1)
    else:
        t = 1.0 - np.abs(z) ** 2
    return np.maximum(t, 1e-300)


def _check_power(alpha, max_abs, name="alpha"):
    if abs(alpha) >= 1.0:
        raise DomainParameterError(
            f"{name}={alpha:g} is outside the B2-finite range |{name}| < 1")
    if abs(alpha) > max_abs:
        raise DomainParameterError(
            f"{name}={alpha:g} exceeds the sweep range |{name}| <= {max_abs:g}")


def _eye_field(scalar, d):
    return scalar[..., None, None] * np.eye(d)


def generate_weight(spec, params):
    """Build one MatrixWeightField of the requested family.

    scalar_power (alpha):      (1-|z|^2)^alpha * I_d
    diagonal_power (alpha, beta): diag((1-|z|^2)^alpha, (1-|z|^2)^-beta)
    rotated_diagonal (alpha, m):  U(m arg z) diag(t^alpha, t^-alpha) U*
    random_log_field (amplitude, seed): exp of a smooth random Hermitian field
    """
    kind = spec.geometry
    fam = spec.family
    params = tuple(params)
    if fam == "scalar_power":
        (alpha,) = params
        _check_power(alpha, spec.max_abs)

        def ev(z, a=alpha):
            return _eye_field(_one_minus_sq(z, kind) ** a, spec.d)
        return weights.MatrixWeightField(
            spec.d, ev, inv_fn=lambda z: ev(z, -alpha),
            name="scalar_power", params=(alpha,))

    if fam == "diagonal_power":
        alpha, beta = params
        _check_power(alpha, spec.max_abs)
        _check_power(beta, spec.max_abs, name="beta")

        def ev(z, sgn=1.0):
            t = _one_minus_sq(z, kind)
            out = np.zeros(t.shape + (2, 2))
            out[..., 0, 0] = t ** (sgn * alpha)
            out[..., 1, 1] = t ** (-sgn * beta)
            return out
        return weights.MatrixWeightField(
            2, ev, inv_fn=lambda z: ev(z, -1.0),
            name="diagonal_power", params=(alpha, beta))

    if fam == "rotated_diagonal":
        alpha, m = params[0], int(params[1])
        _check_power(alpha, spec.max_abs)
        if kind != "disc":
            raise DomainParameterError(
                "rotated_diagonal uses arg z and is disc-only")

        def ev(z, sgn=1.0):
            z = np.asarray(z, dtype=complex)
            t = _one_minus_sq(z, kind)
            a = t ** (sgn * alpha)
            b = t ** (-sgn * alpha)
            theta = m * np.angle(np.where(z == 0, 1.0, z))
            c, s = np.cos(theta), np.sin(theta)
            out = np.empty(t.shape + (2, 2))
            out[..., 0, 0] = a * c * c + b * s * s
            out[..., 1, 1] = a * s * s + b * c * c
            out[..., 0, 1] = (a - b) * c * s
            out[..., 1, 0] = out[..., 0, 1]
            return out
        return weights.MatrixWeightField(
            2, ev, inv_fn=lambda z: ev(z, -1.0),
            name="rotated_diagonal", params=(alpha, float(m)))

    if fam == "random_log_field":
        amplitude, seed = params[0], int(params[1])
        if amplitude < 0:
            raise DomainParameterError("amplitude must be nonnegative")
        if amplitude > 2.0:
            raise DomainParameterError(
                "amplitude > 2 drives the condition number past the cap")
        rng = np.random.default_rng(seed)
        n_basis = 5
        g = rng.standard_normal((n_basis, spec.d, spec.d))
        if spec.d > 1:
            g = g + 1j * rng.standard_normal((n_basis, spec.d, spec.d))
        coeff = linalg.hermitize(g) * (amplitude / n_basis)

        def _basis(z):
            z = np.asarray(z, dtype=complex)
            if kind == "ball2":
                x1, y1 = z[..., 0].real, z[..., 0].imag
                x2, y2 = z[..., 1].real, z[..., 1].imag
                return np.stack(
                    [np.ones_like(x1), x1, y1, x2, y2], axis=-1)
            x, y = z.real, z.imag
            return np.stack(
                [np.ones_like(x), x, y, x * y, x * x - y * y], axis=-1)

        def ev(z, sgn=1.0):
            h = np.tensordot(_basis(z), coeff, axes=(-1, 0))
            return linalg.hermitian_exp(sgn * h)
        return weights.MatrixWeightField(
            spec.d, ev, inv_fn=lambda z: ev(z, -1.0),
            name="random_log_field", params=(amplitude, float(seed)))

    raise DomainParameterError(f"unknown weight family {fam!r}")


# ---------------------------------------------------------------------------
# sweep configuration and rows
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepConfig:
    rows: tuple = ()                # (geometry, family, param1, param2, d)
    disc_radial: int = 64
    disc_angular: int = 128
    disc_truncation: int = 96
    disc_max_level: int = 8
    ball_radial: int = 25
    ball_angular: int = 32
    ball_truncation: int = 24
    ball_max_level: int = 3
    ball_pplus_radial: int = 12
    ball_pplus_angular: int = 15
    averaging_angular: int | None = None     # disc only; None = one per cell
    radial_order: int = 4
    n_directions: int = 64
    n_domination_polys: int = 8
    n_domination_samples: int = 120
    n_square_fields: int = 4
    n_rh_tents: int = 10
    corona_r_cap: float = 1000.0
    seed: int = 2026


def default_rows():
    rows = []
    for a in np.linspace(-0.75, 0.75, 13):
        rows.append(("disc", "scalar_power", round(float(a), 6), 0.0, 1))
    for a in (0.3, 0.5):
        for m in (1, 2, 4):
            rows.append(("disc", "rotated_diagonal", a, float(m), 2))
    for a in (-0.6, -0.3, 0.0, 0.3, 0.6):
        rows.append(("ball2", "scalar_power", a, 0.0, 1))
    return tuple(rows)


def default_config(**overrides):
    cfg = SweepConfig(rows=default_rows())
    return replace(cfg, **overrides) if overrides else cfg


def refine_config(config, factor=2):
    """Double grid resolution and truncation for stability reruns.

    The ball angular count rises to 64 so retained Fourier modes stay
    exactly orthogonal at the doubled truncation.
    """
    return replace(
        config,
        disc_radial=config.disc_radial * factor,
        disc_angular=config.disc_angular * factor,
        disc_truncation=config.disc_truncation * factor,
        ball_radial=config.ball_radial * factor,
        ball_angular=max(config.ball_angular * factor,
                         2 * config.ball_truncation * factor + 2),
        ball_truncation=config.ball_truncation * factor,
        averaging_angular=None,
        radial_order=config.radial_order * factor,
    )


@dataclass
class SweepRow:
    geometry: str
    family: str
    param1: float
    param2: float
    d: int
    b2: float = np.nan
    norm_w: float = np.nan
    norm_tilde: float = np.nan
    norm_pplus_tilde: float = np.nan
    transfer_ratio: float = np.nan
    domination_c: float = np.nan
    reverse_holder_r: float = np.nan
    s1_ratio: float = np.nan
    s2_ratio: float = np.nan
    grid_r: int = 0
    grid_a: int = 0
    trunc_n: int = 0
    seconds: float = 0.0
    status: str = "ok"
    reason: str = ""
    extras: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.status == "ok"

    def csv_values(self):
        def num(x, fmt="%.6g"):
            return "nan" if not np.isfinite(x) else fmt % x
        return (f"{self.geometry}:{self.family}", num(self.param1),
                num(self.param2), str(self.d), num(self.b2),
                num(self.norm_w), num(self.norm_tilde),
                num(self.norm_pplus_tilde), num(self.transfer_ratio),
                num(self.domination_c), num(self.reverse_holder_r),
                num(self.s1_ratio), num(self.s2_ratio), str(self.grid_r),
                str(self.grid_a), str(self.trunc_n), num(self.seconds))


@dataclass
class SweepReport:
    rows: list
    config: SweepConfig

    @property
    def ok_rows(self):
        return [r for r in self.rows if r.ok]

    def column(self, name):
        attr = {"B2": "b2", "normW": "norm_w", "normTilde": "norm_tilde",
                "normPplusTilde": "norm_pplus_tilde",
                "transferRatio": "transfer_ratio",
                "dominationC": "domination_c", "s1Ratio": "s1_ratio",
                "s2Ratio": "s2_ratio",
                "reverseHolderR": "reverse_holder_r"}.get(name, name)
        return np.array([getattr(r, attr) for r in self.ok_rows])

    def csv_text(self):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(CSV_COLUMNS)
        for r in self.rows:
            wr.writerow(r.csv_values())
        return buf.getvalue()

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(self.csv_text())

    def summary(self):
        ratio2, ratio32 = verify_main_theorem(self)
        try:
            slope, _, _ = fit_exponent(self)
        except FitError:
            slope = float("nan")
        failures = [
            f"{r.geometry}:{r.family}({r.param1:g},{r.param2:g}): {r.reason}"
            for r in self.rows if not r.ok]
        return {"fitted_exponent": slope, "max_ratio_B2sq": ratio2,
                "max_ratio_B2_32": ratio32, "failures": failures}

    def to_json(self, path):
        summary = {k: (None if isinstance(v, float) and not np.isfinite(v)
                       else v)
                   for k, v in self.summary().items()}
        with open(path, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")


# ---------------------------------------------------------------------------
# per-geometry context (grids, operators, domination constant)
# ---------------------------------------------------------------------------


class GeometryContext:
    """Everything row computations share: grids, operators, dyadic family."""

    def __init__(self, kind, config):
        self.kind = kind
        self.config = config
        self.geom = make_geometry(kind)
        if kind == "disc":
            self.family = dyadic.build_disc_family(
                self.geom, max_level=config.disc_max_level)
            self.pgrid = projection.build_grid(
                self.geom, radial=config.disc_radial,
                angular=config.disc_angular)
            self.trunc = config.disc_truncation
            self.proj = projection.assemble_projection(
                self.geom, self.pgrid, truncation=self.trunc)
            self.projplus = projection.assemble_projection(
                self.geom, self.pgrid, truncation=self.trunc, kind="Pplus")
            self.agrid = projection.build_averaging_grid(
                self.geom, self.family, angular=config.averaging_angular,
                radial_order=config.radial_order)
            self.grid_r, self.grid_a = config.disc_radial, config.disc_angular
        else:
            sample = dyadic.make_ball2_sample(self.geom)
            self.family = dyadic.build_ball2_family(
                self.geom, sample, max_level=config.ball_max_level)
            self.pgrid = projection.build_grid(
                self.geom, radial=config.ball_radial,
                angular=config.ball_angular)
            self.trunc = config.ball_truncation
            self.proj = projection.assemble_projection(
                self.geom, self.pgrid, truncation=self.trunc)
            pplus_grid = projection.build_grid(
                self.geom, radial=config.ball_pplus_radial,
                angular=config.ball_pplus_angular)
            self.projplus = projection.assemble_projection(
                self.geom, pplus_grid, truncation=self.trunc, kind="Pplus")
            self.agrid = projection.build_averaging_grid(
                self.geom, self.family, radial_order=config.radial_order)
            self.grid_r, self.grid_a = config.ball_radial, config.ball_angular
        self._domination_c = None

    @property
    def domination_c(self):
        """Sparse domination constant, measured once per geometry."""
        if self._domination_c is None:
            cfg = self.config
            rng = np.random.default_rng(cfg.seed + (0 if self.kind == "disc"
                                                    else 1))
            dirs = domination.build_direction_set(
                2, cfg.n_directions, seed=cfg.seed + 11)
            samples = domination.stratified_samples(
                self.family, cfg.n_domination_samples, rng)
            degree = 5 if self.kind == "disc" else 3
            best = 0.0
            for _ in range(cfg.n_domination_polys):
                f = domination.random_vector_polynomial(
                    self.kind, 2, degree, rng)
                best = max(best, domination.domination_constant(
                    self.family, f, samples, dirs, self.agrid))
            self._domination_c = best
        return self._domination_c


# ---------------------------------------------------------------------------
# the sweep
# ---------------------------------------------------------------------------


def compute_row(ctx, geometry, family, param1, param2, d, config, seed):
    row = SweepRow(geometry, family, param1, param2, d,
                   grid_r=ctx.grid_r, grid_a=ctx.grid_a, trunc_n=ctx.trunc)
    start = time.time()
    rng = np.random.default_rng(seed)
    spec = WeightFamilySpec(family, d=d, geometry=geometry)
    params = (param1,) if family == "scalar_power" else (param1, param2)
    W = generate_weight(spec, params)
    # validate on the operator-norm quadrature; the averaging grid's
    # stretched tail nodes sit at machine depth where power weights are
    # huge pointwise yet integrable by construction
    W.validate_at(ctx.pgrid.nodes)

    data = weights.GridWeightData(W, ctx.agrid)
    row.b2 = weights.b2_constant(W, ctx.agrid, ctx.family.systems, data=data)
    row.norm_w = float(projection.weighted_operator_norm(ctx.proj, W))
    tilde = weights.build_tilde_weight(W, ctx.family, ctx.agrid, data=data)
    row.norm_tilde = float(projection.weighted_operator_norm(ctx.proj, tilde))
    row.norm_pplus_tilde = float(
        projection.weighted_operator_norm(ctx.projplus, tilde))
    row.transfer_ratio = row.norm_w / (np.sqrt(row.b2) * row.norm_tilde)
    row.domination_c = ctx.domination_c

    row.extras["step_b2"] = max(
        weights.step_b2_check(W, st, ctx.agrid, data=data)
        for st in tilde.steps)

    sys0 = ctx.family.base[0]
    step0 = tilde.steps[0]
    min_r, violations = np.inf, 0
    for j in range(config.n_rh_tents):
        level = j % 3
        index = int(rng.integers(sys0.n_cells(level)))
        v = rng.standard_normal(d) + (1j * rng.standard_normal(d)
                                      if d > 1 else 0.0)
        v = v / np.linalg.norm(v)
        om = weights.omega_field(step0, dyadic.Tent(sys0, level, index), v)
        try:
            min_r = min(min_r, weights.reverse_holder_exponent(om))
        except BergmanLabError:
            violations += 1
    row.reverse_holder_r = min_r
    row.extras["rh_violations"] = violations

    v0 = np.zeros(d)
    v0[0] = 1.0
    om0 = weights.omega_field(step0, dyadic.Tent(sys0, 0, 0), v0)
    big_r = float(min(np.exp(row.b2), config.corona_r_cap))
    corona = weights.corona_decompose(om0, big_r)
    row.extras["corona_ok"] = all(
        ratio <= 1.0 / big_r for ratio in corona.packing_ratios)
    row.extras["corona_stopping"] = corona.n_stopping

    degree = 4 if geometry == "disc" else 3
    s1_best = s2_best = 0.0
    for _ in range(config.n_square_fields):
        g = domination.random_vector_polynomial(geometry, d, degree, rng)
        s1, s2 = domination.square_functionals(W, step0, g, ctx.agrid)
        gv = g.eval(ctx.agrid.nodes)
        gn2 = float(ctx.agrid.weights @ np.sum(np.abs(gv) ** 2, axis=-1))
        s1_best = max(s1_best, s1 / (row.b2 * gn2))
        s2_best = max(s2_best, s2 / (row.b2 ** 2 * gn2))
    row.s1_ratio, row.s2_ratio = s1_best, s2_best

    row.seconds = time.time() - start
    return row


def run_sweep(config=None, progress=None):
    """One SweepRow per configured (geometry, family, params) tuple."""
    config = config or default_config()
    contexts = {}
    rows = []
    for i, (geometry, family, p1, p2, d) in enumerate(config.rows):
        if geometry not in contexts:
            contexts[geometry] = GeometryContext(geometry, config)
        ctx = contexts[geometry]
        try:
            row = compute_row(ctx, geometry, family, p1, p2, int(d),
                              config, seed=config.seed + 104729 * i)
        except BergmanLabError as exc:
            row = SweepRow(geometry, family, p1, p2, int(d),
                           grid_r=ctx.grid_r, grid_a=ctx.grid_a,
                           trunc_n=ctx.trunc, status="failed",
                           reason=str(exc))
        rows.append(row)
        if progress is not None:
            progress(row)
    report = SweepReport(rows, config)
    _check_report_invariants(report)
    return report


def _check_report_invariants(report):
    for r in report.ok_rows:
        if r.b2 < 1.0 - 1e-6:
            raise DataError(
                f"row {r.family}({r.param1:g}) reports B2={r.b2} < 1")
        if r.norm_w < 0.98:
            raise DataError(
                f"row {r.family}({r.param1:g}) reports ||P||={r.norm_w} < 0.98")


# ---------------------------------------------------------------------------
# summaries over a report
# ---------------------------------------------------------------------------


def fit_exponent(report, x="B2", y="normW"):
    """Least-squares slope of log(y) against log(x) over ok rows."""
    xs = report.column(x)
    ys = report.column(y)
    good = np.isfinite(xs) & np.isfinite(ys) & (xs > 0) & (ys > 0)
    xs, ys = xs[good], ys[good]
    if len(xs) < 4:
        raise FitError(f"need at least 4 finite rows, have {len(xs)}")
    if xs.max() < 1.01 * xs.min():
        raise FitError("x column spread below 1%; exponent not identifiable")
    lx, ly = np.log(xs), np.log(ys)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    total = ly - ly.mean()
    r2 = 1.0 - float(resid @ resid) / max(float(total @ total), 1e-300)
    return float(slope), float(intercept), r2


def verify_main_theorem(report):
    """(max ||P||_W / B2^2,  max ||P||_tilde / B2^{3/2}) over ok rows."""
    rows = report.ok_rows
    if not rows:
        raise DataError("report has no successful rows")
    ratio2 = max(r.norm_w / r.b2 ** 2 for r in rows)
    ratio32 = max(r.norm_tilde / r.b2 ** 1.5 for r in rows)
    return ratio2, ratio32

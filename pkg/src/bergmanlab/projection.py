"""Quadrature grids and the discretized Bergman projection.

Two grid flavors serve different purposes.  The *projection* grid is a
tensor product of octave-graded Gauss-Legendre panels in u = |z|^2 and
uniform midpoint angles; panel grading toward |z| -> 1 makes the radial
moments of monomials up to roughly twice the truncation degree accurate
to ~1e-9, so the discretized projection is idempotent and self-adjoint
far inside the tolerances asserted in the tests.  The *averaging* grid
aligns its radial panels with the kube depth bands of a whole adjacent
dyadic family (so every kube mass is a clean sub-sum) and substitutes
u = 1 - (1-x)^4 on the deepest panel, which turns (1-u)^alpha factors
with 4*alpha integer into exact polynomials and keeps the singular
weight families stable under refinement.

The projection itself is applied matrix-free: FFT over the angular
axes, then a rank-one radial contraction per retained Fourier mode; the
positive operator P+ is a block circulant in the angle difference and
goes through one FFT of its radial-pair tensor.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np
from numpy.polynomial.legendre import leggauss

from . import linalg
from .errors import (
    DataError,
    DomainParameterError,
    IterationError,
    ResolutionError,
)
from .geometry import (
    Ball2Geometry,
    DiscGeometry,
    TWO_PI,
    kernel_partial_sum_ball2,
    kernel_partial_sum_disc,
)

DEFAULT_TRUNCATION = {"disc": 96, "ball2": 24}


def gauss01(n):
    """Gauss-Legendre nodes/weights on [0, 1], weights summing to 1."""
    x, w = leggauss(int(n))
    return 0.5 * (x + 1.0), 0.5 * w


def _panel_nodes(edges, order):
    """GL-`order` nodes and weights on each panel of a sorted edge list."""
    x0, w0 = gauss01(order)
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        nodes.append(lo + (hi - lo) * x0)
        weights.append((hi - lo) * w0)
    return np.concatenate(nodes), np.concatenate(weights)


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


class QuadratureGrid:
    """Nodes, weights and cached per-system kube assignments.

    Disc grids are radius-major: node index = i_radial * A + i_angle.
    Ball tensor grids run (u, v, angle1, angle2); ball averaging grids
    are radius-major over a boundary sample and remember each node's
    atom so kube lookups skip the KD-tree.
    """

    def __init__(self, geom, nodes, weights, *, kind, role, meta,
                 radii=None, radial_weights=None, angles=None,
                 u_nodes=None, u_weights=None, v_nodes=None, v_weights=None,
                 angles1=None, angles2=None, sample=None, atoms=None):
        self.geom = geom
        self.nodes = nodes
        self.weights = weights
        self.kind = kind
        self.role = role
        self.meta = dict(meta)
        self.radii = radii
        self.radial_weights = radial_weights
        self.angles = angles
        self.u_nodes = u_nodes
        self.u_weights = u_weights
        self.v_nodes = v_nodes
        self.v_weights = v_weights
        self.angles1 = angles1
        self.angles2 = angles2
        self.sample = sample
        self.atoms = atoms
        if kind == "disc":
            self.depths = 1.0 - np.abs(nodes)
        else:
            self.depths = 1.0 - np.linalg.norm(nodes, axis=-1)
        self._kube_maps = {}
        self._cells = {}
        self.validate()

    def __len__(self):
        return len(self.weights)

    @property
    def total_mass(self):
        return float(self.weights.sum())

    def validate(self):
        vol = self.geom.domain_volume
        if abs(self.total_mass - vol) > 1e-10 * max(vol, 1.0):
            raise DataError(
                f"grid mass {self.total_mass!r} misses |Omega|={vol!r}")
        if np.any(self.weights <= 0):
            raise DataError("grid has non-positive weights")

    # -- dyadic bookkeeping -------------------------------------------

    def kube_map(self, system):
        key = id(system)
        if key not in self._kube_maps:
            if (self.atoms is not None and system.kind == "ball2"
                    and system.sample is self.sample):
                level = system.depth_level(self.depths)
                idx = np.zeros(level.shape, dtype=np.int64)
                for k in system.levels:
                    m = level == k
                    if np.any(m):
                        idx[m] = system.cell_of_atom[k][self.atoms[m]]
                self._kube_maps[key] = (level, idx)
            else:
                self._kube_maps[key] = system.locate_kube(self.nodes)
        return self._kube_maps[key]

    def cells_at_level(self, system, level):
        key = (id(system), level)
        if key not in self._cells:
            if system.kind == "disc":
                theta = np.mod(np.angle(np.where(self.nodes == 0, 1.0,
                                                 self.nodes)), TWO_PI)
                self._cells[key] = system.cell_index(level, theta)
            else:
                atoms = self.atoms
                if atoms is None:
                    norms = np.linalg.norm(self.nodes, axis=-1)
                    proj = self.nodes / np.maximum(norms, 1e-300)[..., None]
                    atoms = system.sample.nearest_atom(proj)
                    self.atoms = atoms
                self._cells[key] = system.cell_of_atom[level][atoms]
        return self._cells[key]

    def masses(self, system):
        levels, idx = self.kube_map(system)
        out = []
        for k in system.levels:
            m = levels == k
            out.append(np.bincount(idx[m], weights=self.weights[m],
                                   minlength=system.n_cells(k)))
        root_mass = float(self.weights[levels < 0].sum())
        return out, root_mass

    def check_resolution(self, system, min_nodes=4):
        levels, idx = self.kube_map(system)
        for k in system.levels:
            m = levels == k
            counts = np.bincount(idx[m], minlength=system.n_cells(k))
            j = int(np.argmin(counts))
            if counts[j] < min_nodes:
                raise ResolutionError(
                    f"kube (level {k}, index {j}) of {system.label} holds "
                    f"{counts[j]} nodes (< {min_nodes})")
        if int((levels < 0).sum()) < min_nodes:
            raise ResolutionError(f"root kube of {system.label} is under-resolved")


def _octave_edges(grading):
    edges = [0.0] + [1.0 - 2.0 ** (-j) for j in range(1, grading)] + [1.0]
    return np.asarray(edges)


def build_grid(geom, radial=64, angular=128, grading=8):
    """Tensor-product quadrature tuned for the truncated projection."""
    if radial < 8 or angular < 8:
        raise DomainParameterError("need radial and angular counts >= 8")
    if isinstance(geom, DiscGeometry):
        if grading < 1 or radial % grading:
            raise DomainParameterError(
                f"radial count {radial} must be a multiple of grading {grading}")
        u, uw = _panel_nodes(_octave_edges(grading), radial // grading)
        radii = np.sqrt(u)
        angles = (np.arange(angular) + 0.5) * TWO_PI / angular
        nodes = (radii[:, None] * np.exp(1j * angles)[None, :]).ravel()
        weights = np.repeat(uw * np.pi / angular, angular)
        return QuadratureGrid(
            geom, nodes, weights, kind="disc", role="projection",
            meta={"radial": radial, "angular": angular, "grading": grading},
            radii=radii, radial_weights=uw, angles=angles)
    if isinstance(geom, Ball2Geometry):
        u, uw = gauss01(radial)
        v, vw = gauss01(radial)
        a1 = (np.arange(angular) + 0.5) * TWO_PI / angular
        a2 = a1.copy()
        # moduli: |z1| = r sqrt(v), |z2| = r sqrt(1 - v), r = sqrt(u)
        m1 = np.sqrt(u)[:, None] * np.sqrt(v)[None, :]
        m2 = np.sqrt(u)[:, None] * np.sqrt(1.0 - v)[None, :]
        e1 = np.exp(1j * a1)
        e2 = np.exp(1j * a2)
        z1 = m1[:, :, None, None] * e1[None, None, :, None]
        z2 = m2[:, :, None, None] * e2[None, None, None, :]
        nodes = np.stack([np.broadcast_to(z1, z1.shape[:2] + (angular, angular)),
                          np.broadcast_to(z2, z2.shape[:2] + (angular, angular))],
                         axis=-1).reshape(-1, 2)
        wrad = (uw * u)[:, None] * vw[None, :]
        weights = np.repeat(wrad.ravel() * np.pi**2 / angular**2, angular**2)
        return QuadratureGrid(
            geom, nodes, weights, kind="ball2", role="projection",
            meta={"radial": radial, "angular": angular, "grading": 1},
            u_nodes=u, u_weights=uw, v_nodes=v, v_weights=vw,
            angles1=a1, angles2=a2)
    raise DomainParameterError(f"unsupported geometry {geom!r}")


def _band_edges(family):
    """Sorted distinct depth edges of every system's kube bands."""
    edges = {0.0, 1.0}
    for system in family.systems:
        for k in system.levels:
            edges.add(float(system.tent_height(k)))
    out = np.array(sorted(edges))
    keep = np.concatenate([[True], np.diff(out) > 1e-14])
    return out[keep]


def _stretched_panel(lo_x_len, order):
    """Nodes and du-weights for u = 1-(1-x)^4 on the deepest panel."""
    x0, w0 = gauss01(order)
    x_lo = 1.0 - lo_x_len
    x = x_lo + lo_x_len * x0
    u = 1.0 - (1.0 - x) ** 4
    du = 4.0 * (1.0 - x) ** 3 * lo_x_len * w0
    return u, du


def build_averaging_grid(geom, family, angular=None, radial_order=4,
                         stretch_order=8, check=True):
    """Band-aligned grid for weight averages over every kube of a family."""
    t_edges = _band_edges(family)
    if isinstance(geom, DiscGeometry):
        base = family.base[0]
        if angular is None:
            angular = base.n_cells(base.max_level)
        u_edges = np.sort((1.0 - t_edges) ** 2)
        u_in, uw_in = _panel_nodes(u_edges[:-1], radial_order)
        x_len = (1.0 - u_edges[-2]) ** 0.25
        us, uws = _stretched_panel(x_len, stretch_order)
        u = np.concatenate([u_in, us])
        uw = np.concatenate([uw_in, uws])
        radii = np.sqrt(u)
        angles = (np.arange(angular) + 0.5) * TWO_PI / angular
        nodes = (radii[:, None] * np.exp(1j * angles)[None, :]).ravel()
        weights = np.repeat(uw * np.pi / angular, angular)
        grid = QuadratureGrid(
            geom, nodes, weights, kind="disc", role="averaging",
            meta={"radial": len(u), "angular": angular,
                  "grading": len(u_edges) - 1},
            radii=radii, radial_weights=uw, angles=angles)
    elif isinstance(geom, Ball2Geometry):
        sample = family.base[0].sample
        rho_edges = np.sort(1.0 - t_edges)
        rho_in, rw_in = _panel_nodes(rho_edges[:-1], radial_order)
        x_len = (1.0 - rho_edges[-2]) ** 0.25
        rho_s, rw_s = _stretched_panel(x_len, stretch_order)
        rho = np.concatenate([rho_in, rho_s])
        rw = np.concatenate([rw_in, rw_s]) * rho**3
        pts = sample.points
        nodes = (rho[:, None, None] * pts[None, :, :]).reshape(-1, 2)
        weights = (rw[:, None] * sample.weights[None, :]).ravel()
        atoms = np.tile(np.arange(len(sample)), len(rho))
        grid = QuadratureGrid(
            geom, nodes, weights, kind="ball2", role="averaging",
            meta={"radial": len(rho), "angular": len(sample),
                  "grading": len(rho_edges) - 1},
            radii=rho, radial_weights=rw, sample=sample, atoms=atoms)
    else:
        raise DomainParameterError(f"unsupported geometry {geom!r}")
    if check:
        for system in family.systems:
            grid.check_resolution(system)
    return grid


# ---------------------------------------------------------------------------
# discretized projection operators
# ---------------------------------------------------------------------------


class DiscretizedProjection:
    """P or P+ on a quadrature grid, applied matrix-free per Fourier mode."""

    def __init__(self, geom, grid, truncation, kind="P"):
        if truncation < 1:
            raise DomainParameterError("truncation degree must be >= 1")
        if kind not in ("P", "Pplus"):
            raise DomainParameterError(f"unknown projection kind {kind!r}")
        self.geom = geom
        self.grid = grid
        self.truncation = int(truncation)
        self.kind = kind
        if grid.kind == "disc":
            if kind == "P" and truncation >= len(grid.angles):
                raise DomainParameterError(
                    "angular count must exceed the truncation degree")
            self._setup_disc()
        else:
            if kind == "P" and truncation >= min(len(grid.angles1),
                                                 len(grid.angles2)):
                raise DomainParameterError(
                    "angular counts must exceed the truncation degree")
            self._setup_ball2()

    # -- disc ----------------------------------------------------------

    def _setup_disc(self):
        g = self.grid
        r = g.radii
        n = np.arange(self.truncation + 1)
        self._pow = r[None, :] ** n[:, None]              # (N+1, R)
        if self.kind == "P":
            self._lhs = (n + 1)[:, None] * self._pow      # (n+1) r^n
            self._rhs = g.radial_weights[None, :] * self._pow
        else:
            a = len(g.angles)
            dtheta = np.arange(a) * TWO_PI / a
            t = (r[:, None] * r[None, :])[:, :, None] * \
                np.exp(1j * dtheta)[None, None, :]
            babs = np.abs(kernel_partial_sum_disc(t, self.truncation))
            w_ang = np.pi / a
            bw = babs * (g.radial_weights[None, :, None] * w_ang)
            self._bhat = np.fft.fft(bw, axis=2)           # (R, R, A)

    def _apply_disc(self, values):
        g = self.grid
        nr, na = len(g.radii), len(g.angles)
        f = values.reshape(nr, na, -1)
        fhat = np.fft.fft(f, axis=1)
        if self.kind == "P":
            out = np.zeros_like(fhat)
            sel = fhat[:, : self.truncation + 1, :]       # bins n = 0..N
            s = np.einsum("nr,rnd->nd", self._rhs, sel)
            out[:, : self.truncation + 1, :] = \
                np.einsum("nr,nd->rnd", self._lhs, s)
        else:
            out = np.einsum("rsk,skd->rkd", self._bhat, fhat)
        res = np.fft.ifft(out, axis=1)
        return res.reshape(values.shape)

    # -- ball2 ---------------------------------------------------------

    def _setup_ball2(self):
        g = self.grid
        n_tr = self.truncation
        if g.u_nodes is not None:
            m1g = np.sqrt(g.u_nodes)[:, None] * np.sqrt(g.v_nodes)[None, :]
            m2g = np.sqrt(g.u_nodes)[:, None] * np.sqrt(1.0 - g.v_nodes)[None, :]
            wrad = (g.u_weights * g.u_nodes)[:, None] * g.v_weights[None, :]
            self._shape = (len(g.u_nodes), len(g.v_nodes),
                           len(g.angles1), len(g.angles2))
        else:
            raise DomainParameterError(
                "ball2 projections need a tensor-product grid")
        if self.kind == "P":
            modes = [(a, b) for a in range(n_tr + 1)
                     for b in range(n_tr + 1 - a)]
            self._modes = np.array(modes)
            prof = np.stack([m1g**a * m2g**b for a, b in modes])
            norms = np.array([np.pi**2 * factorial(a) * factorial(b)
                              / factorial(a + b + 2) for a, b in modes])
            self._prof = prof
            self._wprof = prof * wrad[None] * (np.pi**2 / norms)[:, None, None]
        else:
            a1, a2 = len(g.angles1), len(g.angles2)
            d1 = np.arange(a1) * TWO_PI / a1
            d2 = np.arange(a2) * TWO_PI / a2
            mm1 = m1g.ravel()
            mm2 = m2g.ravel()
            ip = (mm1[:, None] * mm1[None, :])[:, :, None, None] * \
                np.exp(1j * d1)[None, None, :, None] + \
                (mm2[:, None] * mm2[None, :])[:, :, None, None] * \
                np.exp(1j * d2)[None, None, None, :]
            babs = np.abs(kernel_partial_sum_ball2(ip, n_tr))
            w_ang = np.pi**2 / (a1 * a2)
            bw = babs * (wrad.ravel()[None, :, None, None] * w_ang)
            self._bhat = np.fft.fft2(bw, axes=(2, 3))     # (Q, Q, A1, A2)

    def _apply_ball2(self, values):
        nu, nv, a1, a2 = self._shape
        f = values.reshape(nu, nv, a1, a2, -1)
        fhat = np.fft.fft2(f, axes=(2, 3))
        if self.kind == "P":
            m1s, m2s = self._modes[:, 0], self._modes[:, 1]
            sel = fhat[:, :, m1s, m2s, :]                 # (nu, nv, M, d)
            coeff = np.einsum("muv,uvmd->md", self._wprof, sel)
            out = np.zeros_like(fhat)
            vals = np.einsum("muv,md->uvmd", self._prof, coeff)
            out[:, :, m1s, m2s, :] = vals
        else:
            q = nu * nv
            fh = fhat.reshape(q, a1, a2, -1)
            out = np.einsum("pqkl,qkld->pkld", self._bhat, fh)
            out = out.reshape(nu, nv, a1, a2, -1)
        res = np.fft.ifft2(out, axes=(2, 3))
        return res.reshape(values.shape)

    # -- public interface ----------------------------------------------

    def apply(self, values):
        values = np.asarray(values, dtype=complex)
        if self.grid.kind == "disc":
            out = self._apply_disc(values)
        else:
            out = self._apply_ball2(values)
        if self.kind == "Pplus":
            out = out.real.astype(complex) if np.isrealobj(values) else out
        return out

    def as_matrix(self, max_size=4096):
        m = len(self.grid)
        if m > max_size:
            raise DomainParameterError(
                f"dense matrix for {m} nodes exceeds the {max_size} cap")
        eye = np.eye(m, dtype=complex)
        cols = [self.apply(eye[:, j]) for j in range(m)]
        return np.stack(cols, axis=1)


def assemble_projection(geom, grid, truncation=None, kind="P"):
    if truncation is None:
        truncation = DEFAULT_TRUNCATION[grid.kind]
    return DiscretizedProjection(geom, grid, truncation, kind=kind)


# ---------------------------------------------------------------------------
# weighted operator norms
# ---------------------------------------------------------------------------


@dataclass
class NormEstimate:
    value: float
    iterations: int
    residual: float
    provenance: dict = field(default_factory=dict)

    def __float__(self):
        return float(self.value)


def _weight_on_grid(weight, grid):
    if weight is None:
        return None, None
    if hasattr(weight, "eval_on"):
        w = weight.eval_on(grid)
    else:
        w = weight.eval(grid.nodes)
    s = linalg.hermitian_power(w, 0.5)
    si = linalg.hermitian_power(w, -0.5)
    return s, si


class SymmetrizedOperator:
    """W^{1/2} P W^{-1/2} acting on vector node values (M, d)."""

    def __init__(self, proj, weight, grid):
        self.proj = proj
        self.grid = grid
        self.weight = weight
        self.d = getattr(weight, "d", 1) if weight is not None else 1
        self._s, self._si = _weight_on_grid(weight, grid)

    def _mult(self, mat, x):
        if mat is None:
            return x
        return np.einsum("mij,mj->mi", mat, x)

    def apply(self, x):
        y = self._mult(self._si, x)
        y = np.stack([self.proj.apply(y[:, c]) for c in range(y.shape[1])],
                     axis=1)
        return self._mult(self._s, y)

    def apply_adjoint(self, x):
        y = self._mult(self._s, x)
        y = np.stack([self.proj.apply(y[:, c]) for c in range(y.shape[1])],
                     axis=1)
        return self._mult(self._si, y)


def weighted_operator_norm(proj, weight=None, grid=None, tol=1e-8,
                           max_iter=10000, seed=7, accelerate=True):
    """Top singular value of W^{1/2} P W^{-1/2} by power iteration on T*T.

    The Rayleigh-quotient sequence is Aitken-extrapolated: once the
    increments contract at a steady geometric rate the extrapolated
    limit is reported as soon as it stabilizes to ``tol``.  (Weighted
    spectra on the ball are nearly degenerate at the top; the plain
    increment rule can need thousands of sweeps to certify the same
    value.)  Pass ``accelerate=False`` for the unextrapolated rule.
    """
    grid = grid or proj.grid
    op = SymmetrizedOperator(proj, weight, grid)
    m, d = len(grid), op.d
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((m, d)) + 1j * rng.standard_normal((m, d))
    w = grid.weights[:, None]

    def norm_sq(v):
        return float(np.sum(w * np.abs(v) ** 2))

    x /= np.sqrt(norm_sq(x))
    hist = []
    ext_prev = None
    for it in range(1, max_iter + 1):
        y = op.apply(x)
        rho = norm_sq(y)
        x = op.apply_adjoint(y)
        nx = np.sqrt(norm_sq(x))
        if nx == 0:
            rho, residual = 0.0, 0.0
            break
        x /= nx
        hist.append(rho)
        residual = abs(rho - hist[-2]) / max(rho, 1e-300) if it > 1 else 1.0
        if residual < tol:
            break
        if accelerate and it >= 8:
            d1 = hist[-2] - hist[-3]
            d2 = hist[-1] - hist[-2]
            if d1 != 0.0 and 0.0 < d2 / d1 < 0.9999 and d2 != d1:
                ext = hist[-1] - d2 * d2 / (d2 - d1)
                if ext_prev is not None:
                    gap = abs(ext - ext_prev) / max(abs(ext), 1e-300)
                    if gap < tol and ext >= hist[-1]:
                        rho, residual = ext, gap
                        break
                ext_prev = ext
            else:
                ext_prev = None
    else:
        raise IterationError(
            f"power iteration missed tol {tol:.0e} in {max_iter} steps "
            f"(last residual {residual:.2e})",
            value=float(np.sqrt(rho)), residual=residual, iterations=max_iter)
    prov = {"kind": proj.kind, "truncation": proj.truncation,
            "grid": grid.meta, "weight": getattr(weight, "name", "identity")}
    return NormEstimate(float(np.sqrt(rho)), it, residual, prov)


# ---------------------------------------------------------------------------
# embedding and transfer checks
# ---------------------------------------------------------------------------


def _monomials(grid, degree_cap):
    if grid.kind == "disc":
        z = grid.nodes
        return [z**k for k in range(degree_cap + 1)]
    z1, z2 = grid.nodes[:, 0], grid.nodes[:, 1]
    return [z1**a * z2**b for a in range(degree_cap + 1)
            for b in range(degree_cap + 1 - a)]


def holomorphic_embedding_check(W, tilde, degree_cap, grid, n_random=20,
                                seed=23):
    """max over holomorphic test functions of ||f||^2_W / ||f||^2_tilde."""
    d = W.d
    w_nodes = W.eval(grid.nodes)
    t_nodes = tilde.eval_on(grid)
    gw = grid.weights
    monos = _monomials(grid, degree_cap)
    rng = np.random.default_rng(seed)

    def ratio(fvec):
        num = np.real(np.einsum("m,mij,mj,mi->", gw, w_nodes, fvec,
                                np.conj(fvec)))
        den = np.real(np.einsum("m,mij,mj,mi->", gw, t_nodes, fvec,
                                np.conj(fvec)))
        if den <= 0:
            raise DataError("tilde-weight norm vanished on a test function")
        return num / den

    best = 0.0
    for mono in monos:
        for k in range(d):
            fvec = np.zeros((len(grid), d), dtype=complex)
            fvec[:, k] = mono
            best = max(best, ratio(fvec))
    for _ in range(n_random):
        coef = rng.standard_normal((len(monos), d)) \
            + 1j * rng.standard_normal((len(monos), d))
        fvec = np.einsum("nm,nd->md", np.stack(monos), coef)
        best = max(best, ratio(fvec))
    return best


def transfer_inequality_check(W, family, proj, avg_grid, data=None,
                              norm_w=None, norm_tilde=None, b2=None):
    """(||P||_W / (B2^{1/2} ||P||_tilde), B2) on a common grid."""
    from . import weights as weights_mod

    data = data or weights_mod.GridWeightData(W, avg_grid)
    if b2 is None:
        b2 = weights_mod.b2_constant(W, avg_grid, family.systems, data=data)
    if norm_w is None:
        norm_w = weighted_operator_norm(proj, W)
    tilde = weights_mod.build_tilde_weight(W, family, avg_grid, data=data)
    if norm_tilde is None:
        norm_tilde = weighted_operator_norm(proj, tilde.as_field())
    ratio = float(norm_w) / (np.sqrt(b2) * float(norm_tilde))
    return ratio, b2

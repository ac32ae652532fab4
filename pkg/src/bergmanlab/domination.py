"""Convex-body averages, the sparse operator, Carleson sums, S-functionals.

Convex bodies of vector-valued averages are represented purely through
their support functions: for a region Q and direction xi the support of
the body of averages 1/|Q| int phi f over |phi| <= 1 equals the average
of |<f(w), xi>|, because the optimal phi rotates the pointwise phase.
Tents are radial-suffix-by-cell products on the tensor grids built in
the projection module, so all tent averages reduce to one reverse
cumulative pass over the radial axis plus a cell scatter.

Projections of polynomial test data are computed in closed form (the
kernel pairs one monomial at a time), which keeps the domination
constant a statement about the operator rather than about quadrature.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from . import linalg
from .errors import DataError, DominationViolationError, DomainParameterError
from .weights import region_mask


# ---------------------------------------------------------------------------
# directions and polynomial test data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DirectionSet:
    """Unit vectors in C^d probing convex bodies as real 2d directions."""

    d: int
    vectors: np.ndarray          # (M, d) complex, unit length
    seed: int

    def __len__(self):
        return len(self.vectors)


def build_direction_set(d, size=64, seed=11):
    canon = []
    for k in range(d):
        e = np.zeros(d, dtype=complex)
        e[k] = 1.0
        canon.extend([e, -e, 1j * e, -1j * e])
    canon = np.array(canon)
    if size < len(canon):
        raise DomainParameterError(
            f"direction set must hold the {len(canon)} signed basis vectors")
    rng = np.random.default_rng(seed)
    extra = rng.standard_normal((size - len(canon), d)) \
        + 1j * rng.standard_normal((size - len(canon), d))
    extra /= np.linalg.norm(extra, axis=1, keepdims=True)
    vecs = np.concatenate([canon, extra]) if len(extra) else canon
    return DirectionSet(d, vecs, seed)


class VectorPolynomial:
    """sum of coeff[t] * z^powers[t] conj(z)^powers'[t], C^d-valued.

    Disc terms carry exponent pairs (a, b) for z^a conj(z)^b; ball terms
    carry (a1, a2, b1, b2).  The Bergman projection of each term is a
    single monomial, computed exactly.
    """

    def __init__(self, kind, powers, coeffs):
        self.kind = kind
        self.powers = np.asarray(powers, dtype=np.int64)
        self.coeffs = np.asarray(coeffs, dtype=complex)
        if self.powers.shape[1] != (2 if kind == "disc" else 4):
            raise DomainParameterError("exponent table shape mismatch")

    @property
    def d(self):
        return self.coeffs.shape[1]

    @property
    def degree(self):
        if self.kind == "disc":
            return int(self.powers.sum(axis=1).max())
        return int(self.powers.sum(axis=1).max())

    def eval(self, z):
        z = np.asarray(z, dtype=complex)
        block = 1 << 18
        count = z.shape[0] if z.ndim else 1
        if z.ndim and count > block:
            parts = [self._eval_block(z[i:i + block])
                     for i in range(0, count, block)]
            return np.concatenate(parts)
        return self._eval_block(z)

    def _eval_block(self, z):
        if self.kind == "disc":
            bases = (z, np.conj(z))
        else:
            bases = (z[..., 0], z[..., 1],
                     np.conj(z[..., 0]), np.conj(z[..., 1]))
        # per-variable power ladders beat elementwise ** by a wide margin
        tables = []
        for c, b in enumerate(bases):
            tab = [np.ones_like(b)]
            for _ in range(int(self.powers[:, c].max())):
                tab.append(tab[-1] * b)
            tables.append(tab)
        out = np.zeros(np.shape(bases[0]) + (self.d,), dtype=complex)
        for t, p in enumerate(self.powers):
            term = tables[0][p[0]]
            for c in range(1, len(bases)):
                term = term * tables[c][p[c]]
            out += term[..., None] * self.coeffs[t]
        return out

    def bergman_projection(self):
        """Exact P applied termwise; anti-holomorphic content drops out."""
        powers, coeffs = [], []
        if self.kind == "disc":
            for (a, b), c in zip(self.powers, self.coeffs):
                m = a - b
                if m < 0:
                    continue
                powers.append((m, 0))
                coeffs.append(c * (m + 1) / (a + 1))
        else:
            for (a1, a2, b1, b2), c in zip(self.powers, self.coeffs):
                m1, m2 = a1 - b1, a2 - b2
                if m1 < 0 or m2 < 0:
                    continue
                scale = (factorial(a1) * factorial(a2) * factorial(m1 + m2 + 2)
                         ) / (factorial(m1) * factorial(m2)
                              * factorial(a1 + a2 + 2))
                powers.append((m1, m2, 0, 0))
                coeffs.append(c * scale)
        if not powers:
            powers = [(0, 0)] if self.kind == "disc" else [(0, 0, 0, 0)]
            coeffs = [np.zeros(self.d, dtype=complex)]
        return VectorPolynomial(self.kind, np.array(powers), np.array(coeffs))


def random_vector_polynomial(kind, d, degree, rng):
    if kind == "disc":
        powers = [(a, b) for a in range(degree + 1)
                  for b in range(degree + 1 - a)]
    else:
        powers = [(a1, a2, b1, b2)
                  for a1 in range(degree + 1) for a2 in range(degree + 1 - a1)
                  for b1 in range(degree + 1 - a1 - a2)
                  for b2 in range(degree + 1 - a1 - a2 - b1)]
    powers = np.array(powers)
    coeffs = rng.standard_normal((len(powers), d)) \
        + 1j * rng.standard_normal((len(powers), d))
    # damp high-degree terms so random test data stays O(1) on the domain
    tot = powers.sum(axis=1)
    coeffs *= (0.5 ** tot)[:, None]
    return VectorPolynomial(kind, powers, coeffs)


def _values_of(f, grid):
    if isinstance(f, VectorPolynomial):
        return f.eval(grid.nodes)
    if callable(f):
        return np.asarray(f(grid.nodes))
    vals = np.asarray(f)
    return vals[:, None] if vals.ndim == 1 else vals


# ---------------------------------------------------------------------------
# support functions
# ---------------------------------------------------------------------------


def convex_body_support(f, region, xi, grid):
    """Support function of the convex body of averages of f over a region."""
    vals = _values_of(f, grid)
    mask = region_mask(region, grid)
    w = grid.weights[mask]
    pair = np.abs(vals[mask] @ np.conj(np.asarray(xi)))
    return float(np.dot(w, pair) / w.sum())


@dataclass
class SupportSample:
    """One convex body of averages, held as support values per direction."""

    region: object
    f: object
    directions: DirectionSet
    values: np.ndarray


def support_sample(f, region, directions, grid):
    vals = _values_of(f, grid)
    mask = region_mask(region, grid)
    w = grid.weights[mask]
    pair = np.abs(vals[mask] @ np.conj(directions.vectors.T))
    return SupportSample(region, f, directions, (w @ pair) / w.sum())


class SparseEvaluator:
    """Tent averages of |<f, xi>| over every system of a family.

    Works on tensor-product grids (radial axis times angular cells):
    tents are exactly radial suffixes crossed with boundary cells, so
    one reverse-cumulative radial pass gives every tent sum at once.
    Directions are processed in chunks to cap the working set.
    """

    CHUNK = 16

    def __init__(self, family, grid, f, directions):
        self.family = family
        self.grid = grid
        self.directions = directions
        vals = _values_of(f, grid)
        w = grid.weights
        m = len(directions)
        na = len(grid.angles) if grid.kind == "disc" else len(grid.sample)
        nr = len(grid.radii)
        w3 = w.reshape(nr, na)
        depths_r = 1.0 - grid.radii
        # radial order ascends in radius, so depth descends; tent at height h
        # collects the suffix of radial indices with depth < h
        heights = sorted({float(sys.tent_height(k))
                          for sys in family.systems for k in sys.levels})
        cuts = {h: int(np.searchsorted(-depths_r, -h, side="right"))
                for h in heights}
        suffix_w = {}
        acc_w = np.zeros(na)
        r = nr
        for h in heights:
            while r > cuts[h]:
                r -= 1
                acc_w += w3[r]
            suffix_w[h] = acc_w.copy()
        self._tent_den = {
            id(sys): [np.maximum(np.bincount(
                self._cells(sys, k), weights=suffix_w[float(sys.tent_height(k))],
                minlength=sys.n_cells(k)), 1e-300) for k in sys.levels]
            for sys in family.systems}
        self.omega_avg = np.zeros(m)
        self._tent_avg = {id(sys): [np.zeros((sys.n_cells(k), m))
                                    for k in sys.levels]
                          for sys in family.systems}
        for c0 in range(0, m, self.CHUNK):
            c1 = min(c0 + self.CHUNK, m)
            s = np.abs(vals @ np.conj(directions.vectors[c0:c1].T))
            self.omega_avg[c0:c1] = (w @ s) / grid.total_mass
            s *= w[:, None]
            s3 = s.reshape(nr, na, c1 - c0)
            acc = np.zeros((na, c1 - c0))
            snap = {}
            r = nr
            for h in heights:
                while r > cuts[h]:
                    r -= 1
                    acc += s3[r]
                snap[h] = acc.copy()
            for sys in family.systems:
                for k in sys.levels:
                    num = np.zeros((sys.n_cells(k), c1 - c0))
                    np.add.at(num, self._cells(sys, k),
                              snap[float(sys.tent_height(k))])
                    self._tent_avg[id(sys)][k][:, c0:c1] = \
                        num / self._tent_den[id(sys)][k][:, None]

    def _cells(self, system, level):
        if self.grid.kind == "disc":
            return system.cell_index(level, self.grid.angles)
        return system.cell_of_atom[level]

    def support_many(self, zs):
        """Sparse-operator supports, (n_points, n_directions)."""
        zs = np.asarray(zs)
        out = np.tile(self.omega_avg, (zs.shape[0], 1))
        for sys in self.family.systems:
            lev, idx = sys.locate_kube(zs)
            avg = self._tent_avg[id(sys)]
            if sys.kind == "disc":
                theta = np.mod(np.angle(np.where(zs == 0, 1.0, zs)), 2 * np.pi)
                for k in sys.levels:
                    active = lev >= k
                    if np.any(active):
                        cells = sys.cell_index(k, theta[active])
                        out[active] += avg[k][cells]
            else:
                cur = idx.copy()
                for k in range(sys.max_level, -1, -1):
                    active = lev >= k
                    if np.any(active):
                        out[active] += avg[k][cur[active]]
                        if k > 0:
                            cur[active] = sys.parents[k][cur[active]]
        return out

    def support(self, z):
        """Sparse-operator support at one point, all directions at once."""
        single = np.asarray(z)[None] if self.grid.kind == "disc" \
            else np.asarray(z)[None, :]
        return self.support_many(single)[0]

    def _ancestor(self, system, level, index, target, z):
        """Cell index at shallower ``target`` of the chain through z."""
        if system.kind == "disc":
            theta = float(np.mod(np.angle(z if z != 0 else 1.0), 2 * np.pi))
            return int(system.cell_index(target, theta))
        j = index
        for k in range(level, target, -1):
            j = int(system.parents[k][j])
        return j


def sparse_support(family, f, z, xi, grid):
    """Support function of the Minkowski sum of tent bodies containing z."""
    ds = DirectionSet(np.atleast_1d(np.asarray(xi)).shape[-1],
                      np.atleast_2d(np.asarray(xi, dtype=complex)), seed=0)
    ev = SparseEvaluator(family, grid, f, ds)
    return float(ev.support(z)[0])


# ---------------------------------------------------------------------------
# sparse domination
# ---------------------------------------------------------------------------


def stratified_samples(family, n, rng):
    """Interior points spread over all dyadic depth bands of the family."""
    base = family.base[0]
    geom = family.geom
    levels = np.arange(-1, base.max_level + 1)   # -1 = band above the tents
    out = []
    for i in range(n):
        k = int(levels[i % len(levels)])
        lo, hi = base.kube_depth_range(k)
        depth = rng.uniform(max(lo, 1e-6), hi)
        if geom.kind == "disc":
            theta = rng.uniform(0.0, 2 * np.pi)
            out.append((1.0 - depth) * np.exp(1j * theta))
        else:
            zeta = geom.sample_boundary(rng, 1)[0]
            out.append((1.0 - depth) * zeta)
    return np.array(out)


def domination_constant(family, f, samples, directions, grid,
                        zero_tol=1e-10):
    """Least C with Re<Pf(z), xi> <= C * sparse support at every sample."""
    ev = SparseEvaluator(family, grid, f, directions)
    return float(domination_ratios(ev, f, samples, zero_tol=zero_tol).max())


def domination_ratios(evaluator, f, samples, zero_tol=1e-10):
    """Per-(sample, direction) ratios Re<Pf, xi> / sparse support."""
    samples = np.asarray(samples)
    pf = f.bergman_projection()
    num = np.real(pf.eval(samples)
                  @ np.conj(evaluator.directions.vectors.T))
    sup = evaluator.support_many(samples)
    dead = sup <= zero_tol
    bad = dead & (num > zero_tol)
    if np.any(bad):
        where = np.argwhere(bad)[0]
        raise DominationViolationError(
            f"projection escapes the sparse hull at z={samples[where[0]]!r}")
    return np.where(dead, 0.0,
                    np.maximum(num, 0.0) / np.where(dead, 1.0, sup))


# ---------------------------------------------------------------------------
# Carleson embedding
# ---------------------------------------------------------------------------


def _tent_sums_scalar(system, grid, values):
    """Per-level tent sums and masses of a scalar node field."""
    levels, idx = grid.kube_map(system)
    w = grid.weights
    wv = w * values
    sums, mass = [], []
    for k in system.levels:
        sel = levels >= k
        cid = grid.cells_at_level(system, k)
        n = system.n_cells(k)
        sums.append(np.bincount(cid[sel], weights=wv[sel], minlength=n))
        mass.append(np.bincount(cid[sel], weights=w[sel], minlength=n))
    return sums, mass


def carleson_packing_constant(system, grid, include_omega=True):
    """max over tents of (sum of descendant tent masses) / own mass."""
    _, mass = _tent_sums_scalar(system, grid, np.ones(len(grid)))
    subtree = system.aggregate_to_tents(mass)
    best = max(float((subtree[k] / np.maximum(mass[k], 1e-300)).max())
               for k in system.levels)
    if include_omega:
        total = sum(float(m.sum()) for m in mass) + grid.total_mass
        best = max(best, total / grid.total_mass)
    return best


def carleson_embedding_ratio(f, p, system, grid, include_omega=True):
    """[sum over tents of <f>^p |tent|] / [(p')^p ||f||_p^p]."""
    if not 1.0 < p < np.inf:
        raise DomainParameterError("exponent p must lie in (1, inf)")
    if isinstance(f, np.ndarray) and f.ndim == 1:
        values = np.asarray(f, dtype=float)
    else:
        values = np.real(_values_of(f, grid)[:, 0])
    if np.any(values < 0):
        raise DataError("Carleson embedding test data must be nonnegative")
    sums, mass = _tent_sums_scalar(system, grid, values)
    num = 0.0
    for k in system.levels:
        avg = sums[k] / np.maximum(mass[k], 1e-300)
        num += float(np.dot(avg**p, mass[k]))
    if include_omega:
        num += float(np.dot(grid.weights, values) / grid.total_mass) ** p \
            * grid.total_mass
    pprime = p / (p - 1.0)
    den = pprime**p * float(np.dot(grid.weights, values**p))
    if den <= 0:
        return 0.0
    return num / den


# ---------------------------------------------------------------------------
# square functionals
# ---------------------------------------------------------------------------


def square_functionals(W, step, g, grid):
    """(S1, S2): tent-average square sums against kube volumes.

    S1 conjugates g by <W_step^{-1}>_tent^{-1/2} W_step^{-1/2}; S2 by the
    +1/2 powers.  Both sums run over every tent of the step weight's
    system plus the full domain against the root kube.
    """
    if W.d != step.d:
        raise DomainParameterError("weight and step weight dimensions differ")
    system = step.system
    gv = _values_of(g, grid)
    levels, _ = grid.kube_map(system)
    w = grid.weights
    d = step.d
    # pointwise +-1/2 powers of the step weight are kube-gathers
    half = [linalg.hermitian_power(a, 0.5) for a in step.kube_w]
    mhalf = [linalg.hermitian_power(a, -0.5) for a in step.kube_w]
    root_half = linalg.hermitian_power(step.root_w, 0.5)
    root_mhalf = linalg.hermitian_power(step.root_w, -0.5)
    h1 = _gather_apply(step, grid, mhalf, root_mhalf, gv)
    h2 = _gather_apply(step, grid, half, root_half, gv)
    # tent averages of the pointwise inverse of the step weight
    inv_sums = system.aggregate_to_tents(
        [step.kube_w_inv[k] * step.mass[k][:, None, None]
         for k in system.levels])
    tmass = system.aggregate_to_tents(step.mass)
    kube_mass = step.mass
    s1 = s2 = 0.0
    for k in system.levels:
        sel = levels >= k
        cid = grid.cells_at_level(system, k)[sel]
        inv_avg = inv_sums[k] / tmass[k][:, None, None]
        a_m = linalg.hermitian_power(inv_avg, -0.5)
        a_p = linalg.hermitian_power(inv_avg, 0.5)
        n = system.n_cells(k)
        for h, a_t, acc in ((h1, a_m, 1), (h2, a_p, 2)):
            y = np.einsum("nij,nj->ni", a_t[cid], h[sel])
            norms = np.linalg.norm(y, axis=1)
            tsum = np.bincount(cid, weights=w[sel] * norms, minlength=n)
            avg = tsum / np.maximum(tmass[k], 1e-300)
            val = float(np.dot(avg**2, kube_mass[k]))
            if acc == 1:
                s1 += val
            else:
                s2 += val
    # domain-level term against the root kube
    om_inv = (inv_sums[0].sum(axis=0) + step.root_w_inv * step.root_mass) \
        / (tmass[0].sum() + step.root_mass)
    for h, a_t, which in ((h1, linalg.hermitian_power(om_inv, -0.5), 1),
                          (h2, linalg.hermitian_power(om_inv, 0.5), 2)):
        y = np.einsum("ij,nj->ni", a_t, h)
        avg = float(np.dot(w, np.linalg.norm(y, axis=1)) / grid.total_mass)
        val = avg**2 * step.root_mass
        if which == 1:
            s1 += val
        else:
            s2 += val
    return s1, s2


def _gather_apply(step, grid, arrays, root_arr, gv):
    levels, idx = grid.kube_map(step.system)
    out = np.empty_like(gv)
    root = levels < 0
    out[root] = np.einsum("ij,nj->ni", root_arr, gv[root])
    for k in step.system.levels:
        m = levels == k
        if np.any(m):
            out[m] = np.einsum("nij,nj->ni", arrays[k][idx[m]], gv[m])
    return out

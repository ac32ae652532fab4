"""Matrix weights, averages, B2 constants, step weights, corona, maximal.

Averages are always taken with respect to a quadrature grid, and every
identity that feeds an exact assertion downstream (integral preservation
of step weights, corona packing, Doob bounds) is formulated with the
grid masses themselves, so those inequalities hold on the discretization
up to roundoff rather than up to quadrature error.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .dyadic import Kube, OmegaRegion, Tent
from .errors import (
    DataError,
    DomainParameterError,
    ResolutionError,
    ReverseHolderError,
)

MIN_NODES_PER_REGION = 4


class MatrixWeightField:
    """A field of Hermitian positive-definite d x d matrices on the domain.

    ``eval_fn`` maps an array of domain points to (..., d, d) values; an
    analytic ``inv_fn`` avoids eigendecompositions when the family has a
    closed-form inverse (all built-in families do).
    """

    def __init__(self, d, eval_fn, inv_fn=None, name="custom", params=()):
        self.d = int(d)
        self._eval = eval_fn
        self._inv = inv_fn
        self.name = name
        self.params = tuple(params)

    def __repr__(self):
        ps = ",".join(f"{p:g}" for p in self.params)
        return f"MatrixWeightField({self.name}[{ps}], d={self.d})"

    def eval(self, z):
        return np.asarray(self._eval(z), dtype=complex)

    def inv(self, z):
        if self._inv is not None:
            return np.asarray(self._inv(z), dtype=complex)
        return linalg.hermitian_power(self.eval(z), -1.0)

    def sqrt(self, z):
        return linalg.hermitian_power(self.eval(z), 0.5)

    def inv_sqrt(self, z):
        return linalg.hermitian_power(self.eval(z), -0.5)

    def validate_at(self, z, cond_cap=1e8):
        vals = self.eval(z)
        herm = np.abs(vals - np.conj(np.swapaxes(vals, -1, -2))).max()
        if herm > 1e-12 * max(1.0, np.abs(vals).max()):
            raise DataError(f"weight {self.name} is not Hermitian (dev {herm:.2e})")
        ev = np.linalg.eigvalsh(vals)
        if ev.min() <= 0:
            raise DataError(f"weight {self.name} has a non-positive eigenvalue")
        cond = ev.max() / ev.min()
        if cond > cond_cap:
            raise DataError(f"weight {self.name} condition number {cond:.2e} "
                            f"exceeds {cond_cap:.0e}")
        return float(cond)


def point_shape(z):
    """Leading shape of a point array; ball points occupy a trailing axis."""
    z = np.asarray(z)
    if z.ndim >= 2 and z.shape[-1] == 2:
        return z.shape[:-1]
    return z.shape


def identity_weight(d=1):
    def ev(z):
        eye = np.eye(d, dtype=complex)
        return np.broadcast_to(eye, point_shape(z) + (d, d)).copy()
    return MatrixWeightField(d, ev, inv_fn=ev, name="identity", params=(float(d),))


def constant_weight(mat):
    mat = np.asarray(mat, dtype=complex)
    d = mat.shape[0]
    inv = np.linalg.inv(mat)

    def make(const):
        def ev(z):
            return np.broadcast_to(const, point_shape(z) + (d, d)).copy()
        return ev
    return MatrixWeightField(d, make(mat), inv_fn=make(inv), name="constant")


def inverse_weight(W):
    """The pointwise-inverse field W^{-1} (swaps eval and inv)."""
    return MatrixWeightField(W.d, W.inv, inv_fn=W.eval,
                             name=f"{W.name}^-1", params=W.params)


# ---------------------------------------------------------------------------
# grid-side caching of node values and per-system aggregates
# ---------------------------------------------------------------------------


@dataclass
class SystemStats:
    """Per-kube and per-tent sums of a matrix field over one dyadic system."""
    system: object
    mass: list              # level -> (n_k,) quadrature mass of each kube
    root_mass: float
    kube_sum: list          # level -> (n_k, d, d) sum of w * W over the kube
    root_sum: np.ndarray
    tent_mass: list = field(default=None)
    tent_sum: list = field(default=None)

    def finalize(self):
        self.tent_mass = self.system.aggregate_to_tents(self.mass)
        self.tent_sum = self.system.aggregate_to_tents(self.kube_sum)
        return self

    def kube_avg(self, level):
        m = np.maximum(self.mass[level], 1e-300)[..., None, None]
        return self.kube_sum[level] / m

    def tent_avg(self, level):
        m = np.maximum(self.tent_mass[level], 1e-300)[..., None, None]
        return self.tent_sum[level] / m

    @property
    def omega_mass(self):
        return self.root_mass + float(self.tent_mass[0].sum())

    @property
    def omega_avg(self):
        total = self.root_sum + self.tent_sum[0].sum(axis=0)
        return total / self.omega_mass


def _accumulate(system, grid, values):
    """Sum w*values over kubes of every level (values shaped (M, ...))."""
    levels, idx = grid.kube_map(system)
    w = grid.weights
    wv = values * w.reshape((-1,) + (1,) * (values.ndim - 1))
    mass, sums = [], []
    root_mask = levels < 0
    root_mass = float(w[root_mask].sum())
    root_sum = wv[root_mask].sum(axis=0)
    for k in system.levels:
        mask = levels == k
        n = system.n_cells(k)
        mass.append(np.bincount(idx[mask], weights=w[mask], minlength=n))
        flat = wv[mask].reshape(mask.sum(), -1)
        cols = [
            np.bincount(idx[mask], weights=flat[:, c].real, minlength=n)
            + 1j * np.bincount(idx[mask], weights=flat[:, c].imag, minlength=n)
            for c in range(flat.shape[1])
        ]
        sums.append(np.stack(cols, axis=-1).reshape((n,) + values.shape[1:]))
    return SystemStats(system, mass, root_mass, sums, root_sum).finalize()


class GridWeightData:
    """Node evaluations of W and W^{-1} plus per-system aggregates, cached."""

    def __init__(self, W, grid):
        self.W = W
        self.grid = grid
        self._w_nodes = None
        self._winv_nodes = None
        self._stats = {}
        self._inv_stats = {}

    @property
    def w_nodes(self):
        if self._w_nodes is None:
            self._w_nodes = self.W.eval(self.grid.nodes)
        return self._w_nodes

    @property
    def winv_nodes(self):
        if self._winv_nodes is None:
            self._winv_nodes = self.W.inv(self.grid.nodes)
        return self._winv_nodes

    def stats(self, system):
        key = id(system)
        if key not in self._stats:
            self._stats[key] = _accumulate(system, self.grid, self.w_nodes)
        return self._stats[key]

    def inv_stats(self, system):
        key = id(system)
        if key not in self._inv_stats:
            self._inv_stats[key] = _accumulate(system, self.grid, self.winv_nodes)
        return self._inv_stats[key]


# ---------------------------------------------------------------------------
# averages and B2
# ---------------------------------------------------------------------------


def region_mask(region, grid):
    if isinstance(region, OmegaRegion):
        return np.ones(len(grid.weights), dtype=bool)
    system = region.system
    levels, idx = grid.kube_map(system)
    if isinstance(region, Kube):
        if region.level < 0:
            return levels < 0
        return (levels == region.level) & (idx == region.index)
    if isinstance(region, Tent):
        below = levels >= region.level
        anc = grid.cells_at_level(system, region.level)
        return below & (anc == region.index)
    raise DomainParameterError(f"unsupported region {region!r}")


def average_matrix(W, region, grid):
    """Quadrature average of W over a tent, kube, or the whole domain."""
    mask = region_mask(region, grid)
    count = int(mask.sum())
    if count < MIN_NODES_PER_REGION:
        raise ResolutionError(
            f"region {region!r} holds {count} quadrature nodes "
            f"(need {MIN_NODES_PER_REGION}); refine the grid")
    w = grid.weights[mask]
    vals = W.eval(grid.nodes[mask])
    avg = np.tensordot(w, vals, axes=(0, 0)) / w.sum()
    avg = linalg.hermitize(avg)
    ev = np.linalg.eigvalsh(avg)
    if ev.min() < -1e-10 * max(ev.max(), 1.0):
        raise DataError("matrix average is not PSD beyond tolerance")
    return avg


def b2_constant(W, grid, systems, include_omega=True, data=None, with_argmax=False):
    """sup over dyadic tents (and Omega) of || <W>^(1/2) <W^-1>^(1/2) ||^2."""
    data = data or GridWeightData(W, grid)
    best = 0.0
    where = None
    for system in systems:
        st, sti = data.stats(system), data.inv_stats(system)
        for k in system.levels:
            vals = linalg.pair_operator_norm_sq(st.tent_avg(k), sti.tent_avg(k))
            j = int(np.argmax(vals))
            if vals[j] > best:
                best, where = float(vals[j]), (system.label, k, j)
    if include_omega and systems:
        st = data.stats(systems[0])
        sti = data.inv_stats(systems[0])
        v = float(linalg.pair_operator_norm_sq(st.omega_avg, sti.omega_avg))
        if v > best:
            best, where = v, ("omega", -1, 0)
    if with_argmax:
        return best, where
    return best


# ---------------------------------------------------------------------------
# step and tilde weights
# ---------------------------------------------------------------------------


class StepWeight:
    """Kube-piecewise-constant weight: value <W>_K on each kube K.

    Carries the companion per-kube averages of W^{-1} (the paper's
    W-sub-minus-one variant) and the grid masses used to build it, so
    tent averages of the step weight and of its pointwise inverse are
    exact small-array computations.
    """

    def __init__(self, W, system, grid, data=None):
        data = data or GridWeightData(W, grid)
        st = data.stats(system)
        sti = data.inv_stats(system)
        self.source = W
        self.system = system
        self.grid = grid
        self.d = W.d
        self.mass = st.mass
        self.root_mass = st.root_mass
        self.kube_w = [linalg.hermitize(st.kube_avg(k)) for k in system.levels]
        self.kube_winv = [linalg.hermitize(sti.kube_avg(k)) for k in system.levels]
        self.root_w = linalg.hermitize(st.root_sum / max(st.root_mass, 1e-300))
        self.root_winv = linalg.hermitize(sti.root_sum / max(sti.root_mass, 1e-300))
        # pointwise inverse of the step weight: per-kube inverse of <W>_K
        self.kube_w_inv = [linalg.hermitian_power(a, -1.0) for a in self.kube_w]
        self.root_w_inv = linalg.hermitian_power(self.root_w, -1.0)

    def _gather(self, levels, idx, arrays, root_val):
        out = np.empty(levels.shape + (self.d, self.d), dtype=complex)
        out[levels < 0] = root_val
        for k in self.system.levels:
            m = levels == k
            if np.any(m):
                out[m] = arrays[k][idx[m]]
        return out

    def eval(self, z):
        z = np.asarray(z)
        pts = z[None] if z.ndim == self._point_dim() else z
        levels, idx = self.system.locate_kube(pts)
        out = self._gather(levels, idx, self.kube_w, self.root_w)
        return out[0] if z.ndim == self._point_dim() else out

    def _point_dim(self):
        return 0 if self.system.kind == "disc" else 1

    def inv(self, z):
        z = np.asarray(z)
        pts = z[None] if z.ndim == self._point_dim() else z
        levels, idx = self.system.locate_kube(pts)
        out = self._gather(levels, idx, self.kube_w_inv, self.root_w_inv)
        return out[0] if z.ndim == self._point_dim() else out

    def eval_on(self, grid, inverse=False):
        levels, idx = grid.kube_map(self.system)
        if inverse:
            return self._gather(levels, idx, self.kube_w_inv, self.root_w_inv)
        return self._gather(levels, idx, self.kube_w, self.root_w)

    def integral(self):
        total = self.root_w * self.root_mass
        for k in self.system.levels:
            total = total + np.tensordot(self.mass[k], self.kube_w[k], axes=(0, 0))
        return total

    # -- tent averages from the small arrays (exact on-grid) ------------

    def tent_average(self, level, index, which="w"):
        """Tent average of the step weight or one of its inverse variants.

        ``which``: "w" averages the step values <W>_K; "inv_step" averages
        the pointwise inverse <W>_K^{-1} (the step weight's reciprocal);
        "w_inv" averages the companion <W^{-1}>_K values.
        """
        arrays = {"w": self.kube_w, "inv_step": self.kube_w_inv,
                  "w_inv": self.kube_winv}[which]
        sums = [arrays[k] * self.mass[k][:, None, None] for k in self.system.levels]
        agg = self.system.aggregate_to_tents(sums)
        mass = self.system.aggregate_to_tents(self.mass)
        return agg[level][index] / mass[level][index]

    def as_field(self):
        return MatrixWeightField(self.d, self.eval, inv_fn=self.inv,
                                 name=f"step({self.source.name})",
                                 params=self.source.params)


class TildeWeight:
    """Sum of the step weights over every system of an adjacent family."""

    def __init__(self, W, family, grid, data=None):
        data = data or GridWeightData(W, grid)
        self.source = W
        self.family = family
        self.grid = grid
        self.d = W.d
        self.steps = [StepWeight(W, s, grid, data=data) for s in family.systems]

    @property
    def n_systems(self):
        return len(self.steps)

    def eval(self, z):
        return sum(s.eval(z) for s in self.steps)

    def inv(self, z):
        return linalg.hermitian_power(self.eval(z), -1.0)

    def eval_on(self, grid):
        return sum(s.eval_on(grid) for s in self.steps)

    def integral(self):
        return sum(s.integral() for s in self.steps)

    def as_field(self):
        return MatrixWeightField(self.d, self.eval, inv_fn=self.inv,
                                 name=f"tilde({self.source.name})",
                                 params=self.source.params)


def build_step_weight(W, system, grid, data=None):
    return StepWeight(W, system, grid, data=data)


def build_tilde_weight(W, family, grid, data=None):
    return TildeWeight(W, family, grid, data=data)


def step_b2_check(W, step, grid, data=None):
    """B2 of the step weight over its own tents, relative to B2(W) there.

    Matrix Jensen (<W>_K)^{-1} <= <W^{-1}>_K makes this ratio <= 1 on the
    grid up to roundoff.
    """
    data = data or GridWeightData(W, grid)
    system = step.system
    mass_t = system.aggregate_to_tents(step.mass)
    sum_w = system.aggregate_to_tents(
        [step.kube_w[m] * step.mass[m][:, None, None] for m in system.levels])
    sum_wi = system.aggregate_to_tents(
        [step.kube_w_inv[m] * step.mass[m][:, None, None] for m in system.levels])
    best_step = 0.0
    for k in system.levels:
        avg_w = sum_w[k] / mass_t[k][:, None, None]
        avg_wi = sum_wi[k] / mass_t[k][:, None, None]
        vals = linalg.pair_operator_norm_sq(avg_w, avg_wi)
        best_step = max(best_step, float(vals.max()))
    b2_w = b2_constant(W, grid, [system], include_omega=True, data=data)
    # include Omega for the step side as well
    om_mass = step.root_mass + float(mass_t[0].sum())
    om_w = (step.root_w * step.root_mass
            + sum_w[0].sum(axis=0)) / om_mass
    om_wi = (step.root_w_inv * step.root_mass
             + sum_wi[0].sum(axis=0)) / om_mass
    best_step = max(best_step, float(linalg.pair_operator_norm_sq(om_w, om_wi)))
    return best_step / b2_w


# ---------------------------------------------------------------------------
# scalar omega fields, corona, reverse Holder
# ---------------------------------------------------------------------------


class OmegaField:
    """Scalar trace omega(v; z) of a step weight inside one tent.

    omega is constant on kubes: on K inside the tent K-hat it equals
    <A W_step(K) A v, v> with A = <W_step^{-1}>_{K-hat}^{1/2}.  Arrays
    cover the whole system with zero mass outside the subtree, which
    lets tent aggregation reuse the generic machinery.
    """

    def __init__(self, step, tent, v):
        v = np.asarray(v, dtype=complex)
        if abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise DomainParameterError("direction v must be a unit vector")
        self.step = step
        self.tent = tent
        self.v = v
        system = step.system
        a = linalg.hermitian_power(
            step.tent_average(tent.level, tent.index, which="inv_step"), 0.5)
        av = a @ v
        self.values = []
        self.mass = []
        for k in system.levels:
            if k < tent.level:
                self.values.append(np.zeros(system.n_cells(k)))
                self.mass.append(np.zeros(system.n_cells(k)))
                continue
            inside = grid_subtree_mask(system, tent, k)
            w = step.kube_w[k]
            vals = np.real(np.einsum("i,nij,j->n", np.conj(av), w, av))
            self.values.append(np.where(inside, np.maximum(vals, 0.0), 0.0))
            self.mass.append(np.where(inside, step.mass[k], 0.0))
        self._tent_sum = system.aggregate_to_tents(
            [v * m for v, m in zip(self.values, self.mass)])
        self._tent_mass = system.aggregate_to_tents(self.mass)

    @property
    def system(self):
        return self.step.system

    def tent_avg(self, level, index):
        m = self._tent_mass[level][index]
        if m <= 0:
            return 0.0
        return float(self._tent_sum[level][index] / m)

    def tent_mass(self, level, index):
        return float(self._tent_mass[level][index])

    def moment(self, level, index, r):
        """<omega^r> over the tent (level, index), exact on the grid."""
        system = self.system
        total, mass = 0.0, 0.0
        for k in range(level, system.max_level + 1):
            idx = subtree_indices(system, level, index, k)
            total += float(np.dot(self.mass[k][idx], self.values[k][idx] ** r))
            mass += float(self.mass[k][idx].sum())
        if mass <= 0:
            return 0.0
        return total / mass


def subtree_indices(system, level, index, target_level):
    if system.kind == "disc":
        return system.descendant_indices(level, index, target_level)
    sel = np.arange(system.n_cells(target_level))
    anc = sel
    for k in range(target_level, level, -1):
        anc = system.parents[k][anc]
    return sel[anc == index]


def grid_subtree_mask(system, tent, k):
    inside = np.zeros(system.n_cells(k), dtype=bool)
    inside[subtree_indices(system, tent.level, tent.index, k)] = True
    return inside


def omega_field(step, tent, v):
    return OmegaField(step, tent, v)


@dataclass
class CoronaDecomposition:
    root: Tent
    threshold: float
    generations: list          # list of lists of Tent
    averages: dict             # (level, index) -> <omega> over that tent
    packing_ratios: list       # per selected parent: sum child |K-hat| / |parent|

    @property
    def n_stopping(self):
        return sum(len(g) for g in self.generations)


def _children(system, level, index):
    if level >= system.max_level:
        return np.array([], dtype=np.int64)
    if system.kind == "disc":
        return system.descendant_indices(level, index, level + 1)
    return np.nonzero(system.parents[level + 1] == index)[0]


def corona_decompose(omega, R):
    """Stopping-time generations of tents whose average jumps by R."""
    if R <= 1.0:
        raise DomainParameterError("corona threshold R must exceed 1")
    system = omega.system
    root = omega.tent
    averages = {(root.level, root.index): omega.tent_avg(root.level, root.index)}
    generations = []
    packing = []
    current = [root]
    while current:
        nxt = []
        for q in current:
            base = averages[(q.level, q.index)]
            selected = []
            stack = [(q.level + 1, int(j)) for j in _children(system, q.level, q.index)]
            while stack:
                lev, j = stack.pop()
                avg = omega.tent_avg(lev, j)
                if omega.tent_mass(lev, j) <= 0:
                    continue
                if avg > R * base:
                    selected.append(Tent(system, lev, j))
                    averages[(lev, j)] = avg
                else:
                    stack.extend((lev + 1, int(c)) for c in _children(system, lev, j))
            if selected:
                child_mass = sum(omega.tent_mass(t.level, t.index) for t in selected)
                packing.append(child_mass / omega.tent_mass(q.level, q.index))
                nxt.extend(selected)
        if nxt:
            generations.append(nxt)
        current = nxt
    return CoronaDecomposition(root, float(R), generations, averages, packing)


def reverse_holder_exponent(omega, c0=4.0, tol=1e-4, r_cap=3.0):
    """Largest r in (1, r_cap] with <omega^r>^{1/r} <= c0 <omega>, by bisection."""
    if c0 <= 1.0:
        raise DomainParameterError("reverse-Holder constant must exceed 1")
    level, index = omega.tent.level, omega.tent.index
    base = omega.tent_avg(level, index)
    if base <= 0:
        raise DataError("omega vanishes on the tent")

    def ok(r):
        return omega.moment(level, index, r) ** (1.0 / r) <= c0 * base

    if ok(r_cap):
        return float(r_cap)
    lo = 1.0 + tol
    if not ok(lo):
        raise ReverseHolderError(
            f"no reverse-Holder exponent above 1 (c0={c0}); "
            "step weights should always admit one")
    hi = r_cap
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return float(lo)


# ---------------------------------------------------------------------------
# dyadic maximal operator
# ---------------------------------------------------------------------------


def dyadic_maximal(values, system, grid, include_omega=True):
    """M f at grid nodes: sup of |f| tent averages over tents containing z."""
    values = np.abs(np.asarray(values, dtype=float))
    levels, _ = grid.kube_map(system)
    w = grid.weights
    sums, mass = [], []
    for k in system.levels:
        idx_k = grid.cells_at_level(system, k)
        sel = levels >= k
        n = system.n_cells(k)
        sums.append(np.bincount(idx_k[sel], weights=(w * values)[sel], minlength=n))
        mass.append(np.bincount(idx_k[sel], weights=w[sel], minlength=n))
    out = np.zeros(len(values))
    if include_omega:
        out[:] = float(np.dot(w, values) / w.sum())
    for k in system.levels:
        idx_k = grid.cells_at_level(system, k)
        sel = levels >= k
        avg = sums[k] / np.maximum(mass[k], 1e-300)
        out[sel] = np.maximum(out[sel], avg[idx_k[sel]])
    return out

"""Dyadic structure on the boundary: cells, tents, kubes, families.

Disc systems use exact shifted dyadic arcs.  Level k has
``n_base * s**k`` arcs with left edges at angles
``2*pi*(j + sigma_k * t) / n_k`` where ``sigma_k = (-1)**k`` and the
shift t runs over {0, 1/3, 2/3}.  The alternating sign makes all three
shifted grids exactly nested, which is what the one-third covering trick
needs.  All disc volumes are closed form.

Ball systems are built over a fixed boundary sample ("atoms") carrying
exact surface weights.  Level-k reference points form a maximal
``s**-k * delta`` separated subset of the atoms (greedy insertion in a
seeded order, nets nested across levels); cells are unions of
deepest-level nearest-point regions pulled up through parent links, so
partition and nesting hold exactly on the sample.

A tent over a cell Q at level k is {z : pi(z) in Q, 1 - |z| < h_k} with
h_k = height_mult * delta * s**-k.  The kube of (Q, k) is the tent minus
all level-(k+1) tents, a radial band over Q; at max_level the kube is
the whole tent.  The root region (level -1) is everything below the
level-0 tents.  Kubes of one system partition the domain.

An adjacent family bundles N base systems (disc: the three shifts) with
two "cousin" systems per base whose tent heights are multiplied by
(s+2)/3 and (2s+1)/(3s).  Cousins are one level shallower, which keeps
their deepest kubes resolvable by the same grids.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    ConstructionError,
    CorruptCacheError,
    DomainParameterError,
    StaleCacheError,
)
from .geometry import Ball2Geometry, DiscGeometry, TWO_PI, make_geometry

DISC_SHIFTS = (0.0, 1.0 / 3.0, 2.0 / 3.0)


@dataclass(frozen=True)
class Tent:
    system: "object"
    level: int
    index: int

    @property
    def volume(self):
        return float(self.system.tent_volumes(self.level)[self.index])

    @property
    def height(self):
        return self.system.tent_height(self.level)


@dataclass(frozen=True)
class Kube:
    system: "object"
    level: int  # -1 denotes the root region below all tents
    index: int

    @property
    def volume(self):
        if self.level < 0:
            return self.system.root_volume
        return float(self.system.kube_volumes(self.level)[self.index])


@dataclass(frozen=True)
class OmegaRegion:
    geom: "object"

    @property
    def volume(self):
        return self.geom.domain_volume


def cousin_multipliers(s):
    return ((s + 2.0) / 3.0, (2.0 * s + 1.0) / (3.0 * s))


# ---------------------------------------------------------------------------
# disc systems
# ---------------------------------------------------------------------------


class DiscDyadicSystem:
    """Shifted dyadic arcs on the circle with annular tents."""

    def __init__(self, geom, n_base=16, shift=0.0, max_level=8, s=2,
                 height_mult=1.0, label=None):
        if not isinstance(geom, DiscGeometry):
            raise DomainParameterError("DiscDyadicSystem needs a disc geometry")
        if s < 2 or int(s) != s:
            raise DomainParameterError("branching factor s must be an integer >= 2")
        if shift not in (0.0,) and s != 2:
            raise DomainParameterError("nonzero shifts require s = 2")
        if shift not in DISC_SHIFTS:
            raise DomainParameterError("disc shift must be one of 0, 1/3, 2/3")
        if max_level < 0 or max_level > 24:
            raise DomainParameterError("disc max_level must lie in [0, 24]")
        if n_base < 4:
            raise DomainParameterError("need at least 4 base arcs")
        self.geom = geom
        self.n_base = int(n_base)
        self.s = int(s)
        self.shift = float(shift)
        self.max_level = int(max_level)
        self.height_mult = float(height_mult)
        self.delta = TWO_PI / self.n_base
        if self.height_mult * self.delta >= 1.0:
            raise DomainParameterError("top tent height must stay below 1")
        self.label = label if label is not None else f"disc:t={shift:.4f}:m={height_mult:.4f}"

    # -- cells ---------------------------------------------------------

    @property
    def kind(self):
        return "disc"

    @property
    def levels(self):
        return range(self.max_level + 1)

    def n_cells(self, level):
        return self.n_base * self.s**level

    def _sigma(self, level):
        return -1.0 if level % 2 else 1.0

    def cell_width(self, level):
        return TWO_PI / self.n_cells(level)

    def left_edges(self, level):
        n = self.n_cells(level)
        return (np.arange(n) + self._sigma(level) * self.shift) * TWO_PI / n

    def cell_edges(self, level, index):
        w = self.cell_width(level)
        lo = (index + self._sigma(level) * self.shift) * w
        return lo, lo + w

    def cell_index(self, level, theta):
        n = self.n_cells(level)
        x = np.asarray(theta) * n / TWO_PI - self._sigma(level) * self.shift
        return np.floor(x).astype(np.int64) % n

    def cell_reference(self, level):
        """Arc midpoints as angles."""
        n = self.n_cells(level)
        return np.mod((np.arange(n) + 0.5 + self._sigma(level) * self.shift)
                      * TWO_PI / n, TWO_PI)

    def cell_measure(self, level):
        """Boundary (arc-length) measure of each cell."""
        n = self.n_cells(level)
        return np.full(n, TWO_PI / n)

    def parent_index(self, level):
        """For cells at ``level`` >= 1, the index of the containing parent."""
        if level < 1:
            raise DomainParameterError("level-0 cells have no parent")
        mid = self.cell_reference(level)
        return self.cell_index(level - 1, mid)

    def child_start(self, level, index):
        """Index of the first child at level+1 (children are contiguous)."""
        lo, _ = self.cell_edges(level, index)
        return int(self.cell_index(level + 1, lo + 0.5 * self.cell_width(level + 1)))

    def descendant_indices(self, level, index, target_level):
        """Indices of descendants at ``target_level`` >= level (wrapped)."""
        if target_level == level:
            return np.array([index], dtype=np.int64)
        count = self.s ** (target_level - level)
        lo, _ = self.cell_edges(level, index)
        start = self.cell_index(target_level, lo + 0.5 * self.cell_width(target_level))
        return (start + np.arange(count)) % self.n_cells(target_level)

    # -- tents and kubes -----------------------------------------------

    def tent_height(self, level):
        return self.height_mult * self.delta * self.s ** (-level)

    def kube_depth_range(self, level):
        """Half-open depth band [lo, hi) of kubes at ``level``."""
        if level < 0:
            return self.tent_height(0), 1.0
        hi = self.tent_height(level)
        lo = 0.0 if level == self.max_level else self.tent_height(level + 1)
        return lo, hi

    def _annulus_area(self, h):
        # area of {1 - h < |z| < 1} per radian of arc
        return h - 0.5 * h * h

    def tent_volumes(self, level):
        w = self.cell_width(level)
        area = w * self._annulus_area(self.tent_height(level))
        return np.full(self.n_cells(level), area)

    def kube_volumes(self, level):
        w = self.cell_width(level)
        lo, hi = self.kube_depth_range(level)
        area = w * (self._annulus_area(hi) - self._annulus_area(lo))
        return np.full(self.n_cells(level), area)

    @property
    def root_volume(self):
        h0 = self.tent_height(0)
        return float(np.pi * (1.0 - h0) ** 2)

    def tent(self, level, index):
        return Tent(self, level, index)

    def kube(self, level, index=0):
        return Kube(self, level, index)

    # -- membership ----------------------------------------------------

    def depth_level(self, depth):
        """Kube level of a given boundary distance (vectorized)."""
        depth = np.asarray(depth, dtype=float)
        top = self.height_mult * self.delta
        with np.errstate(divide="ignore"):
            x = np.log(top / np.maximum(depth, 1e-300)) / np.log(self.s)
        level = np.ceil(x - 1e-12).astype(np.int64) - 1
        level = np.minimum(level, self.max_level)
        return np.maximum(level, -1)

    def locate_kube(self, z):
        """Map interior points to (level, index); the root has level -1."""
        z = np.asarray(z)
        depth = 1.0 - np.abs(z)
        level = self.depth_level(depth)
        theta = np.mod(np.angle(np.where(z == 0, 1.0, z)), TWO_PI)
        idx = np.zeros(z.shape, dtype=np.int64)
        for k in range(self.max_level + 1):
            mask = level == k
            if np.any(mask):
                idx[mask] = self.cell_index(k, theta[mask])
        return level, idx

    def kube_contains(self, level, index, z):
        z = np.asarray(z)
        depth = 1.0 - np.abs(z)
        lo, hi = self.kube_depth_range(level)
        band = (depth >= lo) & (depth < hi) & (depth > 0)
        if level < 0:
            return band
        theta = np.mod(np.angle(np.where(z == 0, 1.0, z)), TWO_PI)
        return band & (self.cell_index(level, theta) == index)

    def tent_contains_point(self, level, index, z):
        z = np.asarray(z)
        depth = 1.0 - np.abs(z)
        ok = (depth > 0) & (depth < self.tent_height(level))
        theta = np.mod(np.angle(np.where(z == 0, 1.0, z)), TWO_PI)
        return ok & (self.cell_index(level, theta) == index)

    # -- aggregation ---------------------------------------------------

    def aggregate_to_tents(self, kube_values):
        """Sum per-kube values over tent subtrees.

        ``kube_values`` is a list over levels of arrays shaped (n_k, ...).
        Returns the same layout with tent totals.
        """
        out = [None] * (self.max_level + 1)
        acc = np.array(kube_values[self.max_level], copy=True)
        out[self.max_level] = acc
        for k in range(self.max_level - 1, -1, -1):
            parents = self.parent_index(k + 1)
            lifted = _bincount_rows(parents, out[k + 1], self.n_cells(k))
            out[k] = np.asarray(kube_values[k]) + lifted
        return out

    def cache_key(self):
        return {
            "kind": "disc",
            "s": self.s,
            "delta": self.delta,
            "shift": self.shift,
            "max_level": self.max_level,
            "n_base": self.n_base,
            "height_mult": self.height_mult,
        }


def _bincount_rows(idx, values, minlength):
    """bincount that carries trailing axes (complex-safe)."""
    values = np.asarray(values)
    if values.ndim == 1:
        if np.iscomplexobj(values):
            re = np.bincount(idx, values.real, minlength=minlength)
            im = np.bincount(idx, values.imag, minlength=minlength)
            return re + 1j * im
        return np.bincount(idx, values, minlength=minlength)
    flat = values.reshape(values.shape[0], -1)
    cols = [_bincount_rows(idx, flat[:, j], minlength) for j in range(flat.shape[1])]
    return np.stack(cols, axis=-1).reshape((minlength,) + values.shape[1:])


# ---------------------------------------------------------------------------
# ball sample and greedy nets
# ---------------------------------------------------------------------------


class Ball2BoundarySample:
    """Fixed surface sample of S^3 with exact weights and a KD-tree."""

    def __init__(self, points, weights):
        self.points = np.asarray(points, dtype=complex)
        self.weights = np.asarray(weights, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise DomainParameterError("sample points must have shape (m, 2)")
        self.coords = np.column_stack([
            self.points[:, 0].real, self.points[:, 0].imag,
            self.points[:, 1].real, self.points[:, 1].imag,
        ])
        self.tree = cKDTree(self.coords)

    def __len__(self):
        return self.points.shape[0]

    def quasi_to(self, p):
        """Quasi-distance from every sample point to boundary point p."""
        ip = self.points[:, 0] * np.conj(p[0]) + self.points[:, 1] * np.conj(p[1])
        return np.abs(1.0 - ip)

    def nearest_atom(self, pts):
        pts = np.asarray(pts, dtype=complex)
        coords = np.column_stack([
            pts[..., 0].real.ravel(), pts[..., 0].imag.ravel(),
            pts[..., 1].real.ravel(), pts[..., 1].imag.ravel(),
        ])
        _, idx = self.tree.query(coords)
        return idx.reshape(pts.shape[:-1])


def make_ball2_sample(geom, n_lat=20, n_ang1=36, n_ang2=36):
    pts, wts = geom.hopf_grid(n_lat, n_ang1, n_ang2)
    return Ball2BoundarySample(pts, wts)


def greedy_net(sample, radius, order, seeds=()):
    """Maximal ``radius``-separated subset of the sample, greedy in ``order``.

    ``seeds`` are kept unconditionally (assumed already separated), which
    makes nets nested across levels.  Returns sorted kept indices.
    """
    m = len(sample)
    blocked = np.zeros(m, dtype=bool)
    kept = []
    euclid = np.sqrt(2.0 * radius) * (1.0 + 1e-12)

    def _block(i):
        cand = sample.tree.query_ball_point(sample.coords[i], euclid)
        cand = np.asarray(cand, dtype=np.int64)
        d = np.abs(1.0 - (sample.points[cand, 0] * np.conj(sample.points[i, 0])
                          + sample.points[cand, 1] * np.conj(sample.points[i, 1])))
        blocked[cand[d <= radius]] = True

    for i in seeds:
        kept.append(int(i))
        _block(int(i))
    for i in order:
        if not blocked[i]:
            kept.append(int(i))
            _block(int(i))
    if not kept:
        raise ConstructionError("empty net; sample too coarse for this radius")
    return np.array(sorted(kept), dtype=np.int64)


def build_separated_net(sample, radius, seed=0, seeds=()):
    """Standalone maximal separated net over a ball boundary sample."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(sample))
    return greedy_net(sample, radius, order, seeds=seeds)


# ---------------------------------------------------------------------------
# ball systems
# ---------------------------------------------------------------------------


class Ball2DyadicSystem:
    """Nested nearest-point cells over a boundary sample of S^3."""

    def __init__(self, geom, sample, delta=None, max_level=3, s=2,
                 order_seed=0, height_mult=1.0, label=None, _state=None):
        if not isinstance(geom, Ball2Geometry):
            raise DomainParameterError("Ball2DyadicSystem needs a ball geometry")
        if max_level < 0 or max_level > 10:
            raise DomainParameterError("ball max_level must lie in [0, 10]")
        self.geom = geom
        self.sample = sample
        self.delta = float(delta if delta is not None else geom.delta0)
        if not 0.0 < self.delta < 1.0:
            raise DomainParameterError("delta must lie in (0, 1)")
        self.max_level = int(max_level)
        self.s = float(s)
        if self.s <= 1:
            raise DomainParameterError("branching factor s must exceed 1")
        self.order_seed = int(order_seed)
        self.height_mult = float(height_mult)
        if self.height_mult * self.delta >= 1.0:
            raise DomainParameterError("top tent height must stay below 1")
        self.label = label if label is not None else \
            f"ball2:o={order_seed}:m={height_mult:.4f}"
        if _state is not None:
            (self.nets, self.parents, self.cell_of_atom) = _state
        else:
            self._build()
        self._measures = [
            np.bincount(self.cell_of_atom[k], weights=sample.weights,
                        minlength=len(self.nets[k]))
            for k in range(self.max_level + 1)
        ]

    def _build(self):
        sample = self.sample
        rng = np.random.default_rng(self.order_seed)
        order = rng.permutation(len(sample))
        nets = []
        parents = [None]
        seed_parent = [None]
        prev = np.array([], dtype=np.int64)
        for k in range(self.max_level + 1):
            r_k = self.delta * self.s ** (-k)
            net = greedy_net(sample, r_k, order, seeds=prev)
            nets.append(net)
            if k > 0:
                parents.append(self._assign_parents(net, nets[k - 1], r_parent=self.delta * self.s ** (-(k - 1))))
            prev = net
        self.nets = nets
        self.parents = parents
        deepest = self._assign_atoms(nets[-1], self.delta * self.s ** (-self.max_level))
        cell_of_atom = [None] * (self.max_level + 1)
        cell_of_atom[self.max_level] = deepest
        for k in range(self.max_level - 1, -1, -1):
            cell_of_atom[k] = self.parents[k + 1][cell_of_atom[k + 1]]
        self.cell_of_atom = cell_of_atom

    def _quasi(self, a_idx, b_idx):
        pa = self.sample.points[a_idx]
        pb = self.sample.points[b_idx]
        ip = pa[..., 0] * np.conj(pb[..., 0]) + pa[..., 1] * np.conj(pb[..., 1])
        return np.abs(1.0 - ip)

    def _assign_parents(self, net, parent_net, r_parent):
        """Nearest coarser net point for each net point; self wins if nested."""
        pos_in_parent = {int(i): j for j, i in enumerate(parent_net)}
        out = np.empty(len(net), dtype=np.int64)
        tree = cKDTree(self.sample.coords[parent_net])
        kq = min(len(parent_net), 96)
        _, nn = tree.query(self.sample.coords[net], k=kq)
        nn = np.atleast_2d(nn)
        for row, i in enumerate(net):
            if int(i) in pos_in_parent:
                out[row] = pos_in_parent[int(i)]
                continue
            cand = np.unique(nn[row])
            d = self._quasi(np.full(cand.shape, i), parent_net[cand])
            if d.min() > r_parent * (1.0 + 1e-9):
                d_all = self._quasi(np.full(parent_net.shape, i), parent_net)
                out[row] = int(np.argmin(d_all))
            else:
                out[row] = int(cand[np.argmin(d)])
        return out

    def _assign_atoms(self, net, r_net):
        tree = cKDTree(self.sample.coords[net])
        kq = min(len(net), 96)
        _, nn = tree.query(self.sample.coords, k=kq)
        nn = np.atleast_2d(nn)
        m = len(self.sample)
        rows = np.repeat(np.arange(m), nn.shape[1])
        d = self._quasi(rows, net[nn.ravel()]).reshape(m, nn.shape[1])
        best = np.argmin(d, axis=1)
        out = nn[np.arange(m), best].astype(np.int64)
        misses = d[np.arange(m), best] > r_net * (1.0 + 1e-9)
        for i in np.nonzero(misses)[0]:
            d_all = self._quasi(np.full(net.shape, i), net)
            out[i] = int(np.argmin(d_all))
        return out

    # -- structure accessors -------------------------------------------

    @property
    def kind(self):
        return "ball2"

    @property
    def levels(self):
        return range(self.max_level + 1)

    def n_cells(self, level):
        return len(self.nets[level])

    def cell_reference(self, level):
        return self.sample.points[self.nets[level]]

    def cell_measure(self, level):
        return self._measures[level]

    def parent_index(self, level):
        if level < 1:
            raise DomainParameterError("level-0 cells have no parent")
        return self.parents[level]

    def separation(self, level):
        return self.delta * self.s ** (-level)

    # -- tents and kubes -----------------------------------------------

    def tent_height(self, level):
        return self.height_mult * self.delta * self.s ** (-level)

    def kube_depth_range(self, level):
        if level < 0:
            return self.tent_height(0), 1.0
        hi = self.tent_height(level)
        lo = 0.0 if level == self.max_level else self.tent_height(level + 1)
        return lo, hi

    def _radial_volume(self, h):
        return 0.25 * (1.0 - (1.0 - h) ** 4)

    def tent_volumes(self, level):
        return self._measures[level] * self._radial_volume(self.tent_height(level))

    def kube_volumes(self, level):
        lo, hi = self.kube_depth_range(level)
        return self._measures[level] * (self._radial_volume(hi) - self._radial_volume(lo))

    @property
    def root_volume(self):
        h0 = self.tent_height(0)
        return float(0.5 * np.pi**2 * (1.0 - h0) ** 4)

    def tent(self, level, index):
        return Tent(self, level, index)

    def kube(self, level, index=0):
        return Kube(self, level, index)

    def depth_level(self, depth):
        depth = np.asarray(depth, dtype=float)
        top = self.height_mult * self.delta
        with np.errstate(divide="ignore"):
            x = np.log(top / np.maximum(depth, 1e-300)) / np.log(self.s)
        level = np.ceil(x - 1e-12).astype(np.int64) - 1
        level = np.minimum(level, self.max_level)
        return np.maximum(level, -1)

    def locate_kube(self, z):
        z = np.asarray(z, dtype=complex)
        norms = np.linalg.norm(z, axis=-1)
        depth = 1.0 - norms
        level = self.depth_level(depth)
        safe = np.where(norms[..., None] == 0, 1.0, z)
        proj = safe / np.maximum(np.linalg.norm(safe, axis=-1), 1e-300)[..., None]
        atom = self.sample.nearest_atom(proj)
        idx = np.zeros(level.shape, dtype=np.int64)
        for k in range(self.max_level + 1):
            mask = level == k
            if np.any(mask):
                idx[mask] = self.cell_of_atom[k][atom[mask]]
        return level, idx

    def aggregate_to_tents(self, kube_values):
        out = [None] * (self.max_level + 1)
        out[self.max_level] = np.array(kube_values[self.max_level], copy=True)
        for k in range(self.max_level - 1, -1, -1):
            lifted = _bincount_rows(self.parents[k + 1], out[k + 1], self.n_cells(k))
            out[k] = np.asarray(kube_values[k]) + lifted
        return out

    def cache_key(self):
        return {
            "kind": "ball2",
            "s": self.s,
            "delta": self.delta,
            "shift": self.order_seed,
            "max_level": self.max_level,
            "height_mult": self.height_mult,
            "sample_size": len(self.sample),
        }


# ---------------------------------------------------------------------------
# adjacent families
# ---------------------------------------------------------------------------


@dataclass
class AdjacentFamily:
    geom: object
    base: list
    cousins: list = field(default_factory=list)

    @property
    def systems(self):
        return list(self.base) + list(self.cousins)

    @property
    def n_base(self):
        return len(self.base)

    def omega(self):
        return OmegaRegion(self.geom)


def build_disc_family(geom, n_base=None, max_level=8, shifts=DISC_SHIFTS, s=2,
                      with_cousins=True):
    if n_base is None:
        n_base = int(round(TWO_PI / geom.delta0))
    base = [DiscDyadicSystem(geom, n_base=n_base, shift=t, max_level=max_level,
                             s=s, label=f"disc:t{j}")
            for j, t in enumerate(shifts)]
    cousins = []
    if with_cousins:
        m1, m2 = cousin_multipliers(s)
        lev = max(0, max_level - 1)
        for j, t in enumerate(shifts):
            cousins.append(DiscDyadicSystem(geom, n_base=n_base, shift=t,
                                            max_level=lev, s=s, height_mult=m1,
                                            label=f"disc:t{j}:c1"))
            cousins.append(DiscDyadicSystem(geom, n_base=n_base, shift=t,
                                            max_level=lev, s=s, height_mult=m2,
                                            label=f"disc:t{j}:c2"))
    return AdjacentFamily(geom, base, cousins)


def build_ball2_family(geom, sample, delta=None, max_level=3, n_systems=3,
                       seed=11, s=2, with_cousins=True):
    base = [Ball2DyadicSystem(geom, sample, delta=delta, max_level=max_level,
                              s=s, order_seed=seed + 97 * j, label=f"ball2:o{j}")
            for j in range(n_systems)]
    cousins = []
    if with_cousins:
        m1, m2 = cousin_multipliers(s)
        lev = max(0, max_level - 1)
        for j, sys in enumerate(base):
            for tag, mult in (("c1", m1), ("c2", m2)):
                cousins.append(Ball2DyadicSystem(
                    geom, sample, delta=delta, max_level=lev, s=s,
                    order_seed=sys.order_seed, height_mult=mult,
                    label=f"ball2:o{j}:{tag}",
                    _state=(
                        [sys.nets[k] for k in range(lev + 1)],
                        [None] + [sys.parents[k] for k in range(1, lev + 1)],
                        [sys.cell_of_atom[k] for k in range(lev + 1)],
                    )))
    return AdjacentFamily(geom, base, cousins)


def build_family(geom, **kwargs):
    if geom.kind == "disc":
        return build_disc_family(geom, **kwargs)
    sample = kwargs.pop("sample", None)
    if sample is None:
        sample = make_ball2_sample(geom)
    return build_ball2_family(geom, sample, **kwargs)


# ---------------------------------------------------------------------------
# covering tents and inner polydiscs
# ---------------------------------------------------------------------------


def covering_tent(family, zeta, r):
    """Smallest family tent containing the tent over B(zeta, r), else Omega.

    Scans only the base systems; with the disc shifts this realizes the
    one-third covering trick with an arc of length at most about 6r.
    """
    geom = family.geom
    if r <= 0:
        raise DomainParameterError("covering radius must be positive")
    best = None
    best_vol = np.inf
    for sys in family.base:
        if r > sys.delta:
            continue
        found = _deepest_covering_cell(sys, zeta, r)
        if found is not None:
            tent = Tent(sys, *found)
            if tent.volume < best_vol:
                best, best_vol = tent, tent.volume
    if best is None:
        return OmegaRegion(geom)
    return best


def _deepest_covering_cell(sys, zeta, r):
    if sys.kind == "disc":
        half = float(sys.geom.ball_halfwidth(r))
        for k in range(sys.max_level, -1, -1):
            w = sys.cell_width(k)
            if w + 1e-12 < 2.0 * half:
                continue
            j = int(sys.cell_index(k, zeta))
            lo, _ = sys.cell_edges(k, j)
            off = np.mod(zeta - lo, TWO_PI)
            if half - 1e-12 <= off <= w - half + 1e-12:
                return k, j
        return None
    # ball: require that every atom within quasi-distance r lies in the cell
    sample = sys.sample
    d = sample.quasi_to(zeta)
    inside = np.nonzero(d < r)[0]
    if inside.size == 0:
        return None
    atom = int(sample.nearest_atom(np.asarray(zeta)[None, :])[0])
    for k in range(sys.max_level, -1, -1):
        cell = int(sys.cell_of_atom[k][atom])
        if np.all(sys.cell_of_atom[k][inside] == cell):
            return k, cell
    return None


def inner_polydisc_radius(family, z):
    """Largest inscribed polydisc over all kubes of the family containing z.

    Returns ``(kube, eps)`` where the polydisc D(z, eps) fits inside the
    kube; cousin systems guarantee a uniform lower bound on eps relative
    to the kube scale.
    """
    best = None
    best_eps = -1.0
    for sys in family.systems:
        level, idx = sys.locate_kube(np.asarray(z)[None] if sys.kind == "disc"
                                     else np.asarray(z)[None, :])
        k, j = int(level[0]), int(idx[0])
        eps = _inscribed_eps(sys, k, j, z)
        if eps > best_eps:
            best_eps = eps
            best = Kube(sys, k, j)
    return best, float(best_eps)


def _inscribed_eps(sys, level, index, z):
    lo, hi = sys.kube_depth_range(level)
    if sys.kind == "disc":
        depth = 1.0 - abs(z)
        if level < 0:
            # root region is the full disc of radius 1 - h0
            return max(depth - lo, 0.0)
        radial = min(depth - lo, hi - depth)
        theta = np.mod(np.angle(z), TWO_PI)
        a, b = sys.cell_edges(level, index)
        off = min(np.mod(theta - a, TWO_PI), np.mod(b - theta, TWO_PI))
        ang = abs(z) * np.sin(min(off, 0.5 * np.pi))
        return max(min(radial, ang), 0.0)
    depth = 1.0 - float(np.linalg.norm(z))
    if level < 0:
        return max(depth - lo, 0.0)
    radial = min(depth - lo, hi - depth)
    proj = np.asarray(z) / np.linalg.norm(z)
    d = sys.sample.quasi_to(proj)
    outside = sys.cell_of_atom[level] != index
    if not np.any(outside):
        return max(radial, 0.0)
    margin = float(np.min(d[outside])) / 4.0
    return max(min(radial, margin), 0.0)


# ---------------------------------------------------------------------------
# cache files
# ---------------------------------------------------------------------------

_CACHE_VERSION = 1


def save_system(sys, path):
    """Write a portable cache for one dyadic system (npz with a header)."""
    header = {"version": _CACHE_VERSION, "key": sys.cache_key(),
              "epsilon0": sys.geom.epsilon0, "delta0": sys.geom.delta0}
    arrays = {"header": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)}
    if sys.kind == "ball2":
        arrays["points"] = sys.sample.points
        arrays["weights"] = sys.sample.weights
        for k in range(sys.max_level + 1):
            arrays[f"net_{k}"] = sys.nets[k]
            arrays[f"cells_{k}"] = sys.cell_of_atom[k]
            if k > 0:
                arrays[f"parents_{k}"] = sys.parents[k]
    np.savez_compressed(path, **arrays)


def load_system(path, expect_key=None):
    """Load a cached system; mismatched keys raise StaleCacheError."""
    try:
        data = np.load(path, allow_pickle=False)
        header = json.loads(bytes(data["header"]).decode())
    except Exception as exc:  # noqa: BLE001 - any parse failure is corruption
        raise CorruptCacheError(f"unreadable dyadic cache {path}: {exc}") from exc
    if header.get("version") != _CACHE_VERSION:
        raise StaleCacheError(f"cache version mismatch in {path}")
    key = header["key"]
    if expect_key is not None:
        probe = dict(expect_key)
        for name, val in probe.items():
            have = key.get(name)
            same = (abs(have - val) < 1e-12) if isinstance(val, float) else have == val
            if not same:
                raise StaleCacheError(f"cache {path} was built for {name}={have}, "
                                      f"requested {val}")
    if key["kind"] == "disc":
        geom = make_geometry("disc", epsilon0=header["epsilon0"],
                             delta0=header["delta0"])
        return DiscDyadicSystem(geom, n_base=key["n_base"], shift=key["shift"],
                                max_level=key["max_level"], s=int(key["s"]),
                                height_mult=key["height_mult"])
    geom = make_geometry("ball2", epsilon0=header["epsilon0"],
                         delta0=header["delta0"])
    sample = Ball2BoundarySample(data["points"], data["weights"])
    levels = key["max_level"]
    nets = [data[f"net_{k}"] for k in range(levels + 1)]
    cells = [data[f"cells_{k}"] for k in range(levels + 1)]
    parents = [None] + [data[f"parents_{k}"] for k in range(1, levels + 1)]
    return Ball2DyadicSystem(geom, sample, delta=key["delta"],
                             max_level=levels, s=key["s"],
                             order_seed=key["shift"],
                             height_mult=key["height_mult"],
                             _state=(nets, parents, cells))


# ---------------------------------------------------------------------------
# structural self-checks
# ---------------------------------------------------------------------------


def _verify_disc_system(sys, rng, n_spot):
    tol = 1e-10
    for k in sys.levels:
        n = sys.n_cells(k)
        if abs(n * sys.cell_width(k) - TWO_PI) > tol:
            raise ConstructionError(f"{sys.label}: level {k} arcs do not tile the circle")
        mid = sys.cell_reference(k)
        if not np.array_equal(sys.cell_index(k, mid), np.arange(n)):
            raise ConstructionError(f"{sys.label}: level {k} index round-trip failed")
    for k in range(1, sys.max_level + 1):
        par = sys.parent_index(k)
        wc, wp = sys.cell_width(k), sys.cell_width(k - 1)
        clo = sys.left_edges(k)
        plo = (par + sys._sigma(k - 1) * sys.shift) * wp
        off = np.mod(clo - plo, TWO_PI)
        inside = (off < wp - wc + 1e-9) | (off > TWO_PI - 1e-9)
        if not inside.all():
            raise ConstructionError(f"{sys.label}: level {k} cell escapes its parent")
        for i in rng.integers(0, sys.n_cells(k - 1), size=min(8, sys.n_cells(k - 1))):
            kids = sys.descendant_indices(k - 1, int(i), k)
            if len(kids) != sys.s or not (par[kids] == i).all():
                raise ConstructionError(f"{sys.label}: children of ({k - 1},{i}) inconsistent")
    # depth bands tile (0, 1)
    lo_root, hi_root = sys.kube_depth_range(-1)
    if hi_root != 1.0 or abs(lo_root - sys.tent_height(0)) > tol:
        raise ConstructionError(f"{sys.label}: root band mismatch")
    for k in sys.levels:
        lo, hi = sys.kube_depth_range(k)
        want_lo = 0.0 if k == sys.max_level else sys.tent_height(k + 1)
        if abs(hi - sys.tent_height(k)) > tol or abs(lo - want_lo) > tol:
            raise ConstructionError(f"{sys.label}: kube band at level {k} mismatch")
    # kube volumes tile the disc; tents aggregate their kube subtrees
    vols = [sys.kube_volumes(k) for k in sys.levels]
    total = sys.root_volume + sum(v.sum() for v in vols)
    defect = abs(total - np.pi)
    if defect > 1e-10:
        raise ConstructionError(f"{sys.label}: kube areas sum to pi + {defect:.2e}")
    agg = sys.aggregate_to_tents(vols)
    for k in sys.levels:
        if np.max(np.abs(agg[k] - sys.tent_volumes(k))) > 1e-12:
            raise ConstructionError(f"{sys.label}: tent/kube aggregation mismatch at level {k}")
    # membership spot checks
    depth = rng.uniform(1e-9, 1.0, size=n_spot)
    z = (1.0 - depth) * np.exp(2j * np.pi * rng.uniform(size=n_spot))
    lev, idx = sys.locate_kube(z)
    for j in range(n_spot):
        if not sys.kube_contains(int(lev[j]), int(idx[j]), z[j]):
            raise ConstructionError(f"{sys.label}: locate/contains disagree at {z[j]}")
        if lev[j] >= 0 and not sys.tent_contains_point(int(lev[j]), int(idx[j]), z[j]):
            raise ConstructionError(f"{sys.label}: located kube outside its tent at {z[j]}")
    return defect


def _verify_ball_system(sys, rng, n_spot):
    sample = sys.sample
    surf = sample.weights.sum()
    worst_cover = 0.0
    for k in sys.levels:
        meas = sys.cell_measure(k)
        if abs(meas.sum() - surf) > 1e-9 * surf:
            raise ConstructionError(f"{sys.label}: level {k} cells do not tile the sphere")
        if (meas <= 0).any():
            raise ConstructionError(f"{sys.label}: empty cell at level {k}")
        cells = sys.cell_of_atom[k]
        if cells.min() < 0 or cells.max() >= sys.n_cells(k):
            raise ConstructionError(f"{sys.label}: atom cell index out of range at level {k}")
        if k > 0:
            lift = sys.parents[k][sys.cell_of_atom[k]]
            if not np.array_equal(lift, sys.cell_of_atom[k - 1]):
                raise ConstructionError(f"{sys.label}: parent lift broken at level {k}")
        # net separation on a subsample of centers
        net = sys.nets[k]
        pick = net if len(net) <= 1200 else rng.choice(net, 1200, replace=False)
        pts = sample.points[pick]
        ip = pts[:, 0, None] * np.conj(pts[None, :, 0]) + pts[:, 1, None] * np.conj(pts[None, :, 1])
        d = np.abs(1.0 - ip)
        np.fill_diagonal(d, np.inf)
        if d.min() < sys.separation(k) * (1.0 - 1e-9):
            raise ConstructionError(f"{sys.label}: net at level {k} under-separated")
        # covering radius of cells, in units of the net separation
        atoms = rng.integers(0, len(sample), size=min(4000, len(sample)))
        dist = sys._quasi(atoms, net[cells[atoms]])
        worst_cover = max(worst_cover, float(dist.max()) / sys.separation(k))
    if worst_cover > 6.0:
        raise ConstructionError(
            f"{sys.label}: covering radius {worst_cover:.2f}x separation (expected O(1))")
    lo_root, hi_root = sys.kube_depth_range(-1)
    if hi_root != 1.0 or abs(lo_root - sys.tent_height(0)) > 1e-12:
        raise ConstructionError(f"{sys.label}: root band mismatch")
    vols = [sys.kube_volumes(k) for k in sys.levels]
    total = sys.root_volume + sum(v.sum() for v in vols)
    defect = abs(total - 0.5 * np.pi**2)
    if defect > 1e-9:
        raise ConstructionError(f"{sys.label}: kube volumes miss the ball volume by {defect:.2e}")
    agg = sys.aggregate_to_tents(vols)
    for k in sys.levels:
        if np.max(np.abs(agg[k] - sys.tent_volumes(k))) > 1e-10:
            raise ConstructionError(f"{sys.label}: tent/kube aggregation mismatch at level {k}")
    # membership spot checks through the atom sample
    depth = rng.uniform(1e-9, 1.0, size=n_spot)
    pts = sample.points[rng.integers(0, len(sample), size=n_spot)]
    z = (1.0 - depth)[:, None] * pts
    lev, idx = sys.locate_kube(z)
    for j in range(n_spot):
        lo, hi = sys.kube_depth_range(int(lev[j]))
        if not (lo <= depth[j] < hi or abs(depth[j] - hi) < 1e-12):
            raise ConstructionError(f"{sys.label}: located level off its depth band")
        if lev[j] >= 0 and not 0 <= idx[j] < sys.n_cells(int(lev[j])):
            raise ConstructionError(f"{sys.label}: located index out of range")
    return defect, worst_cover


def verify_structure(family, seed=0, n_spot=400):
    """Run structural self-checks on every system of an adjacent family.

    Checks that cells tile the boundary at every level, children sit
    inside their parents, kube depth bands tile (0, 1), kube volumes sum
    to the domain volume, tents equal their aggregated kube subtrees,
    and point location is consistent with membership.  Ball systems
    additionally check net separation, parent-lift consistency, and that
    cell covering radii stay comparable to the net separation.

    Returns a diagnostics dict; raises ConstructionError on any failure.
    """
    rng = np.random.default_rng(seed)
    report = {"kind": family.geom.kind, "systems": len(family.systems),
              "volume_defect": 0.0, "covering_ratio": None, "spot_checks": n_spot}
    labels = [s.label for s in family.systems]
    if len(set(labels)) != len(labels):
        raise ConstructionError("family systems carry duplicate labels")
    for sys in family.systems:
        if sys.kind == "disc":
            defect = _verify_disc_system(sys, rng, n_spot)
        else:
            defect, cover = _verify_ball_system(sys, rng, n_spot)
            report["covering_ratio"] = max(report["covering_ratio"] or 0.0, cover)
        report["volume_defect"] = max(report["volume_defect"], float(defect))
    return report

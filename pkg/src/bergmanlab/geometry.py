"""Model domains: unit disc in C^1 and unit ball in C^2.

Each geometry bundles the defining function rho, the radial boundary
projection, a boundary quasi-metric with its non-isotropic balls, tents
over boundary balls with exact Lebesgue volumes, distinguished polydiscs,
and the closed-form Bergman kernel.

Conventions
-----------
* Disc boundary points are angles in [0, 2*pi); ball points are unit
  vectors in C^2 stored as complex arrays with trailing axis 2.
* The disc ball B(zeta, delta) is the arc of angular half-width
  arcsin(delta / 2) about zeta, so the tent over it is an annular sector
  with the exact area 2 * arcsin(delta/2) * (delta - delta^2/2).
* The ball-of-C^2 quasi-metric is d(p, q) = |1 - <p, q>|; its ball has
  the exact surface measure 2*pi*lens(delta), a circle-intersection area.
* Tents degenerate to the whole domain once delta reaches epsilon0.

Polydisc radii follow the anisotropic scaling tau_1 = delta in the
complex normal direction and tau_2 = sqrt(delta) in the complex
tangential direction (ball only; the disc polydisc is a Euclidean disc).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CollarError,
    DomainParameterError,
    NearSingularityError,
    UndefinedProjectionError,
)

TWO_PI = 2.0 * np.pi


def wrap_angle(theta):
    """Wrap angles into (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(theta), TWO_PI)


def _require_positive(delta, name="delta"):
    if not np.all(np.asarray(delta) > 0.0):
        raise DomainParameterError(f"{name} must be positive")


@dataclass(frozen=True)
class DiscGeometry:
    """Unit disc with the chord boundary metric and annular-sector tents."""

    epsilon0: float = 0.5
    delta0: float = TWO_PI / 16.0
    kind: str = field(default="disc", init=False)
    n: int = field(default=1, init=False)

    def __post_init__(self):
        if not 0.0 < self.epsilon0 < 1.0:
            raise DomainParameterError("epsilon0 must lie in (0, 1)")
        if not 0.0 < self.delta0 < self.epsilon0:
            raise DomainParameterError("delta0 must lie in (0, epsilon0)")

    # -- defining function and projection -------------------------------

    def rho(self, z):
        return np.abs(z) - 1.0

    def project_boundary(self, z):
        """Radial projection to the circle, returned as angles in [0, 2pi)."""
        z = np.asarray(z)
        if np.any(np.abs(z) == 0.0):
            raise UndefinedProjectionError("projection undefined at the origin")
        return np.mod(np.angle(z), TWO_PI)

    def boundary_point(self, theta):
        return np.exp(1j * np.asarray(theta))

    def as_boundary_point(self, p):
        """Validate/normalize a boundary point given as an angle."""
        return float(np.mod(p, TWO_PI))

    # -- boundary quasi-metric and balls --------------------------------

    def boundary_distance(self, p, q):
        """Chord distance |e^{ip} - e^{iq}|."""
        return 2.0 * np.abs(np.sin(0.5 * (np.asarray(p) - np.asarray(q))))

    def ball_halfwidth(self, delta):
        """Angular half-width of B(., delta); saturates at pi."""
        _require_positive(delta)
        d = np.minimum(np.asarray(delta, dtype=float), 2.0)
        return np.where(np.asarray(delta) >= 2.0, np.pi, np.arcsin(d / 2.0))

    def ball_contains(self, zeta, delta, p):
        return np.abs(wrap_angle(np.asarray(p) - zeta)) < self.ball_halfwidth(delta)

    def ball_measure(self, delta):
        """Arc length of B(., delta) on the unit circle."""
        return 2.0 * self.ball_halfwidth(delta)

    # -- tents ----------------------------------------------------------

    def tent_contains(self, zeta, delta, z):
        _require_positive(delta)
        z = np.asarray(z)
        inside = np.abs(z) < 1.0
        if delta >= self.epsilon0:
            return inside
        depth_ok = inside & (1.0 - np.abs(z) < delta)
        # angle of z is only consulted where z != 0, which depth_ok ensures
        theta = np.angle(np.where(z == 0, 1.0, z))
        return depth_ok & (np.abs(wrap_angle(theta - zeta)) < self.ball_halfwidth(delta))

    def tent_volume(self, zeta, delta):
        """Exact area of the tent over B(zeta, delta)."""
        _require_positive(delta)
        if delta >= self.epsilon0:
            return self.domain_volume
        return float(2.0 * np.arcsin(delta / 2.0) * (delta - 0.5 * delta * delta))

    def tent_volume_model(self, delta):
        _require_positive(delta)
        return float(delta) ** 2

    @property
    def domain_volume(self):
        return float(np.pi)

    # -- polydiscs ------------------------------------------------------

    def polydisc_radii(self, q, delta):
        _require_positive(delta)
        return (float(delta),)

    def polydisc_gauge(self, q1, q2):
        """Smallest eps with q2 in D(q1, eps); Euclidean for the disc."""
        return np.abs(np.asarray(q2) - np.asarray(q1))

    def polydisc_contains(self, q, delta, z, dilate=1.0):
        _require_positive(delta)
        return self.polydisc_gauge(q, z) < dilate * delta

    # -- kernel ---------------------------------------------------------

    def bergman_kernel(self, z, w):
        """K(z, w) = (1/pi) (1 - z conj(w))^{-2}."""
        u = np.asarray(z) * np.conj(np.asarray(w))
        denom = 1.0 - u
        if np.any(np.abs(denom) < 1e-14):
            raise NearSingularityError("kernel evaluated too close to the diagonal")
        return (1.0 / np.pi) / (denom * denom)

    def kernel_truncated(self, z, w, n_trunc):
        """Degree-n_trunc partial sum of the kernel series, closed form.

        sum_{n<=N} (n+1) u^n = (1 - (N+2) u^{N+1} + (N+1) u^{N+2}) / (1-u)^2.
        """
        u = np.asarray(z) * np.conj(np.asarray(w))
        return kernel_partial_sum_disc(u, n_trunc)

    # -- kernel bound ---------------------------------------------------

    def in_collar(self, q):
        return np.abs(self.rho(q)) < self.epsilon0

    def kernel_bound_ratio(self, q1, q2):
        """|K(q1, q2)| times the volume of the tent at the combined scale.

        The scale is t = |rho(q1)| + |rho(q2)| + gauge(q1, q2); bounded
        ratios express that the kernel decays like an inverse tent volume.
        """
        if not (np.all(self.in_collar(q1)) and np.all(self.in_collar(q2))):
            raise CollarError("kernel bound ratio needs collar points")
        t = np.abs(self.rho(q1)) + np.abs(self.rho(q2)) + self.polydisc_gauge(q1, q2)
        mag = np.abs(self.bergman_kernel(q1, q2))
        t = np.atleast_1d(np.asarray(t, dtype=float))
        vols = np.array([self.tent_volume(0.0, ti) for ti in t])
        out = mag * vols.reshape(np.shape(mag))
        return out if out.shape else float(out)

    # -- sampling helpers ----------------------------------------------

    def sample_interior(self, rng, size, max_depth=None):
        r = np.sqrt(rng.uniform(0.0, 1.0, size))
        if max_depth is not None:
            r = 1.0 - rng.uniform(0.0, max_depth, size)
        theta = rng.uniform(0.0, TWO_PI, size)
        return r * np.exp(1j * theta)

    def sample_boundary(self, rng, size):
        return rng.uniform(0.0, TWO_PI, size)


def kernel_partial_sum_disc(u, n_trunc):
    """Partial sum (1/pi) sum_{n<=N} (n+1) u^n via the closed form."""
    u = np.asarray(u, dtype=complex)
    n = int(n_trunc)
    if n < 0:
        raise DomainParameterError("truncation degree must be nonnegative")
    denom = 1.0 - u
    small = np.abs(denom) < 1e-8
    # closed form away from u = 1, series limit on the tiny set near it
    safe = np.where(small, 0.5, u)
    num = 1.0 - (n + 2) * safe ** (n + 1) + (n + 1) * safe ** (n + 2)
    out = num / ((1.0 - safe) * (1.0 - safe))
    if np.any(small):
        limit = 0.5 * (n + 1) * (n + 2)
        out = np.where(small, limit + 0.0j, out)
    out = out / np.pi
    return out if out.shape else complex(out)


def _lens_area(delta):
    """Area of {u in unit disc : |1 - u| < delta} (two-circle lens)."""
    d = float(delta)
    if d <= 0.0:
        raise DomainParameterError("delta must be positive")
    if d >= 2.0:
        return float(np.pi)
    return float(
        np.arccos(1.0 - 0.5 * d * d)
        + d * d * np.arccos(0.5 * d)
        - 0.5 * d * np.sqrt(4.0 - d * d)
    )


@dataclass(frozen=True)
class Ball2Geometry:
    """Unit ball of C^2 with the |1 - <p, q>| boundary quasi-metric."""

    epsilon0: float = 0.5
    delta0: float = 0.45
    kind: str = field(default="ball2", init=False)
    n: int = field(default=2, init=False)

    def __post_init__(self):
        if not 0.0 < self.epsilon0 < 1.0:
            raise DomainParameterError("epsilon0 must lie in (0, 1)")
        if not 0.0 < self.delta0 < self.epsilon0:
            raise DomainParameterError("delta0 must lie in (0, epsilon0)")

    # -- defining function and projection -------------------------------

    def rho(self, z):
        return np.linalg.norm(np.asarray(z), axis=-1) - 1.0

    def project_boundary(self, z):
        z = np.asarray(z)
        norms = np.linalg.norm(z, axis=-1)
        if np.any(norms == 0.0):
            raise UndefinedProjectionError("projection undefined at the origin")
        return z / norms[..., None]

    def as_boundary_point(self, p):
        p = np.asarray(p, dtype=complex)
        if p.shape[-1] != 2:
            raise DomainParameterError("ball2 boundary points live in C^2")
        if np.any(np.abs(np.linalg.norm(p, axis=-1) - 1.0) > 1e-12):
            raise DomainParameterError("boundary point must be unit length")
        return p

    def inner(self, p, q):
        """Hermitian inner product <p, q> = sum p_i conj(q_i)."""
        return np.sum(np.asarray(p) * np.conj(np.asarray(q)), axis=-1)

    # -- boundary quasi-metric and balls --------------------------------

    def boundary_distance(self, p, q):
        return np.abs(1.0 - self.inner(p, q))

    def ball_contains(self, zeta, delta, p):
        _require_positive(delta)
        return self.boundary_distance(p, zeta) < delta

    def ball_measure(self, delta):
        """Exact surface measure of B(., delta) on S^3 (total 2*pi^2)."""
        _require_positive(delta)
        return TWO_PI * _lens_area(delta)

    # -- tents ----------------------------------------------------------

    def tent_contains(self, zeta, delta, z):
        _require_positive(delta)
        z = np.asarray(z)
        norms = np.linalg.norm(z, axis=-1)
        inside = norms < 1.0
        if delta >= self.epsilon0:
            return inside
        depth_ok = inside & (1.0 - norms < delta)
        safe = np.where(norms[..., None] == 0, 1.0, z)
        proj = safe / np.maximum(np.linalg.norm(safe, axis=-1), 1e-300)[..., None]
        return depth_ok & self.ball_contains(zeta, delta, proj)

    def tent_volume(self, zeta, delta):
        _require_positive(delta)
        if delta >= self.epsilon0:
            return self.domain_volume
        radial = 0.25 * (1.0 - (1.0 - float(delta)) ** 4)
        return float(self.ball_measure(delta) * radial)

    def tent_volume_model(self, delta):
        _require_positive(delta)
        return float(delta) ** 3

    @property
    def domain_volume(self):
        return float(np.pi**2 / 2.0)

    @property
    def surface_area(self):
        return float(2.0 * np.pi**2)

    # -- polydiscs ------------------------------------------------------

    def polydisc_radii(self, q, delta):
        _require_positive(delta)
        return (float(delta), float(np.sqrt(delta)))

    def _split_normal_tangential(self, q1, q2):
        q1 = np.asarray(q1, dtype=complex)
        q2 = np.asarray(q2, dtype=complex)
        norm1 = np.linalg.norm(q1, axis=-1)
        if np.any(norm1 == 0.0):
            raise UndefinedProjectionError("polydisc frame undefined at the origin")
        unit = q1 / norm1[..., None]
        diff = q2 - q1
        h = np.sum(diff * np.conj(unit), axis=-1)
        tang = diff - h[..., None] * unit
        return h, np.linalg.norm(tang, axis=-1)

    def polydisc_gauge(self, q1, q2):
        """Smallest eps with q2 in D(q1, eps): max(|normal|, |tangential|^2)."""
        h, tnorm = self._split_normal_tangential(q1, q2)
        return np.maximum(np.abs(h), tnorm * tnorm)

    def polydisc_contains(self, q, delta, z, dilate=1.0):
        _require_positive(delta)
        h, tnorm = self._split_normal_tangential(q, z)
        return (np.abs(h) < dilate * delta) & (tnorm < np.sqrt(dilate * delta))

    # -- kernel ---------------------------------------------------------

    def bergman_kernel(self, z, w):
        """K(z, w) = (2/pi^2) (1 - <z, w>)^{-3}."""
        u = self.inner(z, w)
        denom = 1.0 - u
        if np.any(np.abs(denom) < 1e-14):
            raise NearSingularityError("kernel evaluated too close to the diagonal")
        return (2.0 / np.pi**2) / (denom * denom * denom)

    def kernel_truncated(self, z, w, n_trunc):
        u = self.inner(z, w)
        return kernel_partial_sum_ball2(u, n_trunc)

    # -- kernel bound ---------------------------------------------------

    def in_collar(self, q):
        return np.abs(self.rho(q)) < self.epsilon0

    def kernel_bound_ratio(self, q1, q2):
        if not (np.all(self.in_collar(q1)) and np.all(self.in_collar(q2))):
            raise CollarError("kernel bound ratio needs collar points")
        t = np.abs(self.rho(q1)) + np.abs(self.rho(q2)) + self.polydisc_gauge(q1, q2)
        mag = np.abs(self.bergman_kernel(q1, q2))
        zeta = self.project_boundary(q1)
        t = np.atleast_1d(np.asarray(t, dtype=float))
        vols = np.array([self.tent_volume(zeta, ti) for ti in t])
        out = mag * vols.reshape(np.shape(mag))
        return out if out.shape else float(out)

    # -- structured boundary sample -------------------------------------

    def hopf_grid(self, n_lat, n_ang1, n_ang2):
        """Uniform-weight surface grid in Hopf-type coordinates.

        Points are z = (sqrt(1-v) e^{i a}, sqrt(v) e^{i b}) at cell
        midpoints of uniform grids in v, a, b.  The surface measure is
        (1/2) dv da db, so all weights equal 2*pi^2 / (n_lat n_a1 n_a2).
        """
        v = (np.arange(n_lat) + 0.5) / n_lat
        a = TWO_PI * (np.arange(n_ang1) + 0.5) / n_ang1
        b = TWO_PI * (np.arange(n_ang2) + 0.5) / n_ang2
        vv, aa, bb = np.meshgrid(v, a, b, indexing="ij")
        pts = np.empty(vv.shape + (2,), dtype=complex)
        pts[..., 0] = np.sqrt(1.0 - vv) * np.exp(1j * aa)
        pts[..., 1] = np.sqrt(vv) * np.exp(1j * bb)
        pts = pts.reshape(-1, 2)
        weights = np.full(pts.shape[0], self.surface_area / pts.shape[0])
        return pts, weights

    def sample_boundary(self, rng, size):
        g = rng.standard_normal((size, 4))
        g /= np.linalg.norm(g, axis=1)[:, None]
        return np.stack([g[:, 0] + 1j * g[:, 1], g[:, 2] + 1j * g[:, 3]], axis=-1)

    def sample_interior(self, rng, size, max_depth=None):
        pts = self.sample_boundary(rng, size)
        if max_depth is None:
            r = rng.uniform(0.0, 1.0, size) ** 0.25
        else:
            r = 1.0 - rng.uniform(0.0, max_depth, size)
        return pts * r[:, None]


def kernel_partial_sum_ball2(u, n_trunc):
    """Partial sum (2/pi^2) sum_{n<=N} (n+1)(n+2)/2 u^n, by Horner."""
    u = np.asarray(u, dtype=complex)
    n = int(n_trunc)
    if n < 0:
        raise DomainParameterError("truncation degree must be nonnegative")
    coeffs = 0.5 * (np.arange(n + 1) + 1.0) * (np.arange(n + 1) + 2.0)
    out = np.full_like(u, coeffs[-1])
    for c in coeffs[-2::-1]:
        out = out * u + c
    out = out * (2.0 / np.pi**2)
    return out if out.shape else complex(out)


def make_geometry(kind, **kwargs):
    """Factory by kind string ('disc' or 'ball2')."""
    if kind == "disc":
        return DiscGeometry(**kwargs)
    if kind == "ball2":
        return Ball2Geometry(**kwargs)
    raise DomainParameterError(f"unknown geometry kind: {kind!r}")

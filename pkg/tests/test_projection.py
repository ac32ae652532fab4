"""Quadrature grids, the discretized projection, and operator norms."""
import numpy as np
import pytest

from bergmanlab import projection, weights
from bergmanlab.errors import DomainParameterError, ResolutionError
from bergmanlab.harness import WeightFamilySpec, generate_weight


# ---------------------------------------------------------------------------
# projection grids
# ---------------------------------------------------------------------------

def test_disc_grid_integrates_area(disc, disc_pgrid):
    assert disc_pgrid.weights.sum() == pytest.approx(np.pi, rel=1e-13)


def test_disc_grid_monomial_orthogonality(disc_pgrid):
    # int_D z^a conj(z)^b dA = pi/(a+1) * delta_ab, exact on the grid
    z = disc_pgrid.nodes
    w = disc_pgrid.weights
    for a in range(0, 13, 3):
        for b in range(0, 13, 4):
            got = np.sum(w * z**a * np.conj(z) ** b)
            want = np.pi / (a + 1) if a == b else 0.0
            assert got == pytest.approx(want, abs=2e-14)


def test_ball_grid_integrates_volume(ball2):
    grid = projection.build_grid(ball2, radial=12, angular=9)
    assert grid.weights.sum() == pytest.approx(np.pi**2 / 2.0, rel=1e-12)


def test_ball_grid_monomial_norms(ball2):
    # ||z1^a z2^b||^2 = pi^2 a! b! / (a+b+2)!
    from math import factorial
    grid = projection.build_grid(ball2, radial=12, angular=9)
    z1, z2 = grid.nodes[:, 0], grid.nodes[:, 1]
    for a, b in [(0, 0), (1, 0), (2, 1), (0, 3)]:
        got = np.sum(grid.weights * np.abs(z1**a * z2**b) ** 2)
        want = np.pi**2 * factorial(a) * factorial(b) / factorial(a + b + 2)
        assert got == pytest.approx(want, rel=1e-12)


def test_build_grid_rejects_bad_shapes(disc):
    with pytest.raises(DomainParameterError):
        projection.build_grid(disc, radial=6, angular=128)
    with pytest.raises(DomainParameterError):
        projection.build_grid(disc, radial=30, angular=128, grading=8)


def test_grid_is_deterministic(disc):
    g1 = projection.build_grid(disc, radial=32, angular=64)
    g2 = projection.build_grid(disc, radial=32, angular=64)
    assert np.array_equal(g1.nodes, g2.nodes)
    assert np.array_equal(g1.weights, g2.weights)


# ---------------------------------------------------------------------------
# averaging grids
# ---------------------------------------------------------------------------

def test_averaging_grid_integrates_area(disc_agrid):
    assert disc_agrid.weights.sum() == pytest.approx(np.pi, rel=1e-12)


def test_averaging_grid_resolves_every_kube(disc_agrid, disc_family):
    for system in disc_family.systems:
        disc_agrid.check_resolution(system)   # raises on under-resolution


def test_averaging_grid_reaches_deep_tail(disc_agrid):
    # the stretched tail must place nodes far below the deepest band edge
    depth = 1.0 - np.abs(disc_agrid.nodes)
    assert depth.min() < 1e-9


def test_under_resolved_family_raises(disc):
    import bergmanlab.dyadic as dyadic
    fam = dyadic.build_disc_family(disc, max_level=8)
    with pytest.raises(ResolutionError):
        projection.build_averaging_grid(disc, fam, angular=16)


def test_ball_averaging_grid_resolves_every_kube(ball_agrid, ball_family):
    for system in ball_family.systems:
        ball_agrid.check_resolution(system)
    assert ball_agrid.weights.sum() == pytest.approx(np.pi**2 / 2.0, rel=1e-9)


# ---------------------------------------------------------------------------
# the discretized projection
# ---------------------------------------------------------------------------

def test_projection_fixes_holomorphic_monomials(disc_proj, disc_pgrid):
    z = disc_pgrid.nodes
    for k in (0, 3, 17, 40):
        out = disc_proj.apply(z**k)
        assert np.max(np.abs(out - z**k)) < 1e-12


def test_projection_kills_antiholomorphic_monomials(disc_proj, disc_pgrid):
    z = disc_pgrid.nodes
    for k in (1, 2, 9):
        out = disc_proj.apply(np.conj(z) ** k)
        assert np.max(np.abs(out)) < 1e-12


@pytest.mark.parametrize("a,b", [(2, 1), (5, 2), (7, 7), (9, 4)])
def test_projection_of_mixed_monomials_disc(disc_proj, disc_pgrid, a, b):
    # P(z^a conj(z)^b) = (a-b+1)/(a+1) z^(a-b) for a >= b, else 0
    z = disc_pgrid.nodes
    out = disc_proj.apply(z**a * np.conj(z) ** b)
    want = (a - b + 1) / (a + 1) * z ** (a - b)
    assert np.max(np.abs(out - want)) < 1e-12


def test_projection_of_mixed_monomials_ball(ball2):
    from math import factorial
    grid = projection.build_grid(ball2, radial=12, angular=15)
    proj = projection.assemble_projection(ball2, grid, truncation=8)
    z1, z2 = grid.nodes[:, 0], grid.nodes[:, 1]
    # P(z^a conj(z)^b) = a!(|m|+2)!/(m!(|a|+2)!) z^m when m = a - b >= 0
    a, b = (2, 1), (1, 0)
    m = (1, 1)
    coeff = (factorial(a[0]) * factorial(a[1]) * factorial(sum(m) + 2)) / (
        factorial(m[0]) * factorial(m[1]) * factorial(sum(a) + 2))
    out = proj.apply(z1 ** a[0] * z2 ** a[1] * np.conj(z1) ** b[0]
                     * np.conj(z2) ** b[1])
    want = coeff * z1 ** m[0] * z2 ** m[1]
    assert np.max(np.abs(out - want)) < 1e-11
    # annihilation when the exponent drops below zero in any slot
    out0 = proj.apply(np.conj(z2) * z1)
    assert np.max(np.abs(out0)) < 1e-11


def test_projection_is_idempotent_on_grid(disc_proj, disc_pgrid, rng):
    f = (rng.standard_normal(len(disc_pgrid))
         + 1j * rng.standard_normal(len(disc_pgrid)))
    once = disc_proj.apply(f)
    twice = disc_proj.apply(once)
    assert np.max(np.abs(twice - once)) < 1e-10


def test_positive_projection_dominates_in_norm(disc, disc_pgrid):
    plus = projection.assemble_projection(disc, disc_pgrid, truncation=96,
                                          kind="Pplus")
    f = np.ones(len(disc_pgrid))
    # P+ has a positive kernel, so ||P+ 1|| >= ||P 1|| = ||1||
    out = plus.apply(f)
    assert np.all(out.real > 0)
    norm = projection.weighted_operator_norm(plus)
    assert float(norm) > 1.0


# ---------------------------------------------------------------------------
# operator norms
# ---------------------------------------------------------------------------

def test_unweighted_norm_is_one(disc_proj):
    norm = projection.weighted_operator_norm(disc_proj)
    assert float(norm) == pytest.approx(1.0, abs=1e-6)
    assert norm.iterations >= 1
    assert norm.residual < 1e-6


def test_weighted_norm_frozen_value(disc_proj):
    W = generate_weight(WeightFamilySpec("scalar_power"), (0.5,))
    norm = projection.weighted_operator_norm(disc_proj, W)
    assert float(norm) == pytest.approx(1.231453, abs=2e-4)


def test_accelerated_stopping_matches_plain_rule(disc_proj):
    W = generate_weight(WeightFamilySpec("scalar_power"), (0.5,))
    fast = projection.weighted_operator_norm(disc_proj, W)
    slow = projection.weighted_operator_norm(disc_proj, W, accelerate=False)
    assert float(fast) == pytest.approx(float(slow), rel=3e-5)
    assert fast.iterations <= slow.iterations


def test_symmetrized_operator_is_self_adjoint(disc_proj, disc_pgrid, rng):
    W = generate_weight(WeightFamilySpec("rotated_diagonal", d=2), (0.3, 2.0))
    op = projection.SymmetrizedOperator(disc_proj, W, disc_pgrid)
    m = len(disc_pgrid)
    x = rng.standard_normal((m, 2)) + 1j * rng.standard_normal((m, 2))
    y = rng.standard_normal((m, 2)) + 1j * rng.standard_normal((m, 2))
    w = disc_pgrid.weights[:, None]
    lhs = np.sum(w * np.conj(y) * op.apply(x))
    rhs = np.sum(w * np.conj(op.apply_adjoint(y)) * x)
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_embedding_ratio_identity_vs_tilde(disc, disc_pgrid, disc_agrid,
                                           disc_family):
    W = weights.identity_weight(1)
    tilde = weights.build_tilde_weight(W, disc_family, disc_agrid)
    ratio = projection.holomorphic_embedding_check(W, tilde, 8, disc_pgrid,
                                                   n_random=5)
    assert ratio == pytest.approx(1.0 / 9.0, rel=1e-12)


def test_transfer_ratio_below_one_for_power_weight(disc, disc_proj,
                                                   disc_agrid, disc_family):
    W = generate_weight(WeightFamilySpec("scalar_power"), (0.5,))
    ratio, b2 = projection.transfer_inequality_check(
        W, disc_family, disc_proj, disc_agrid)
    assert b2 == pytest.approx(4.0 / 3.0, rel=1e-6)
    assert 0.5 < ratio < 1.0

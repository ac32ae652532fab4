"""Matrix weights: B2 constants, step/tilde weights, corona, reverse Holder."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bergmanlab import dyadic, weights
from bergmanlab.errors import DataError, DomainParameterError
from bergmanlab.harness import WeightFamilySpec, generate_weight


def scalar_power(alpha, kind="disc", d=1):
    return generate_weight(WeightFamilySpec("scalar_power", d=d, geometry=kind),
                           (alpha,))


# ---------------------------------------------------------------------------
# weight fields
# ---------------------------------------------------------------------------

def test_identity_weight_evaluates_to_eye():
    W = weights.identity_weight(3)
    z = np.array([0.1 + 0.2j, -0.5j])
    out = W.eval(z)
    assert out.shape == (2, 3, 3)
    assert np.allclose(out, np.eye(3))
    assert np.allclose(W.inv(z), np.eye(3))


def test_constant_weight_roundtrip():
    mat = np.array([[2.0, 1.0], [1.0, 2.0]])
    W = weights.constant_weight(mat)
    z = np.array([0.3, 0.1 + 0.4j])
    assert np.allclose(W.eval(z) @ W.inv(z), np.eye(2))


def test_inverse_weight_swaps_eval_and_inv():
    W = scalar_power(0.5)
    Winv = weights.inverse_weight(W)
    z = np.array([0.2, 0.5 + 0.1j, -0.7j])
    assert np.allclose(Winv.eval(z), W.inv(z))
    assert np.allclose(Winv.inv(z), W.eval(z))
    assert Winv.name.endswith("^-1")


def test_validate_at_rejects_indefinite_field():
    bad = weights.MatrixWeightField(
        2, lambda z: np.broadcast_to(np.diag([1.0, -1.0]),
                                     weights.point_shape(z) + (2, 2)),
        name="indefinite")
    with pytest.raises(DataError):
        bad.validate_at(np.array([0.1, 0.2j]))


# ---------------------------------------------------------------------------
# B2 constants against closed-form radial integrals
# ---------------------------------------------------------------------------

def test_b2_identity_is_exactly_one(disc_agrid, disc_family):
    b2 = weights.b2_constant(weights.identity_weight(1), disc_agrid,
                             disc_family.systems)
    assert b2 == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("alpha,expected", [
    (0.5, 4.0 / 3.0),       # 1 / (1 - alpha^2)
    (-0.75, 16.0 / 7.0),
    (0.75, 16.0 / 7.0),
])
def test_b2_scalar_power_closed_form(disc_agrid, disc_family, alpha, expected):
    b2 = weights.b2_constant(scalar_power(alpha), disc_agrid,
                             disc_family.systems)
    assert b2 == pytest.approx(expected, rel=1e-6)


def test_b2_rotated_diagonal_closed_form(disc_agrid, disc_family):
    W = generate_weight(WeightFamilySpec("rotated_diagonal", d=2), (0.5, 2.0))
    b2 = weights.b2_constant(W, disc_agrid, disc_family.systems)
    assert b2 == pytest.approx(16.0 / 9.0, rel=1e-6)


def test_b2_diagonal_power_is_max_of_blocks(disc_agrid, disc_family):
    W = generate_weight(WeightFamilySpec("diagonal_power", d=2), (0.5, 0.75))
    b2 = weights.b2_constant(W, disc_agrid, disc_family.systems)
    expected = max(1.0 / (1.0 - 0.5**2), 1.0 / (1.0 - 0.75**2))
    assert b2 == pytest.approx(expected, rel=1e-6)


def test_b2_ball_scalar_power_closed_form(ball_agrid, ball_family):
    # radial integrals of (1-|z|^2)^a over Koranyi tents give
    # 4 / ((1-a^2)(4-a^2)) in the small-tent limit
    W = scalar_power(0.5, kind="ball2")
    b2 = weights.b2_constant(W, ball_agrid, ball_family.systems)
    assert b2 == pytest.approx(4.0 / (0.75 * 3.75), rel=0.02)


def test_b2_argmax_names_a_tent(disc_agrid, disc_family):
    b2, where = weights.b2_constant(scalar_power(0.5), disc_agrid,
                                    disc_family.systems, with_argmax=True)
    label, level, index = where
    assert b2 >= 1.0
    assert label == "omega" or any(s.label == label
                                   for s in disc_family.systems)
    assert level >= -1 and index >= 0


def test_b2_inversion_symmetry(disc_agrid, disc_family):
    # ||<W>^(1/2) <W^-1>^(1/2)|| is symmetric under W <-> W^-1
    W = generate_weight(WeightFamilySpec("rotated_diagonal", d=2), (0.3, 1.0))
    b2 = weights.b2_constant(W, disc_agrid, disc_family.systems)
    b2i = weights.b2_constant(weights.inverse_weight(W), disc_agrid,
                              disc_family.systems)
    assert b2 == pytest.approx(b2i, rel=1e-10)


@settings(max_examples=15, deadline=None)
@given(alpha=st.floats(min_value=-0.85, max_value=0.85))
def test_b2_at_least_one(disc_agrid, disc_family, alpha):
    b2 = weights.b2_constant(scalar_power(alpha), disc_agrid,
                             disc_family.systems)
    assert b2 >= 1.0 - 1e-9


# ---------------------------------------------------------------------------
# step and tilde weights
# ---------------------------------------------------------------------------

def test_step_weight_matches_direct_kube_average(disc_agrid, disc_family):
    W = scalar_power(0.5)
    sys0 = disc_family.base[0]
    step = weights.build_step_weight(W, sys0, disc_agrid)
    vals = W.eval(disc_agrid.nodes)[:, 0, 0].real
    gw = disc_agrid.weights
    level, idx = sys0.locate_kube(disc_agrid.nodes)
    for k, j in [(0, 3), (2, 17), (sys0.max_level, 5)]:
        sel = (level == k) & (idx == j)
        direct = np.sum(gw[sel] * vals[sel]) / np.sum(gw[sel])
        assert step.kube_w[k][j][0, 0].real == pytest.approx(direct, rel=1e-12)


def test_step_weight_root_average(disc_agrid, disc_family):
    W = scalar_power(-0.3)
    step = weights.build_step_weight(W, disc_family.base[0], disc_agrid)
    vals = W.eval(disc_agrid.nodes)[:, 0, 0].real
    level, _ = disc_family.base[0].locate_kube(disc_agrid.nodes)
    sel = level == -1
    gw = disc_agrid.weights
    direct = np.sum(gw[sel] * vals[sel]) / np.sum(gw[sel])
    assert step.root_w[0, 0].real == pytest.approx(direct, rel=1e-12)


def test_tilde_weight_of_identity_is_nine_identity(disc_agrid, disc_family):
    tilde = weights.build_tilde_weight(weights.identity_weight(2),
                                       disc_family, disc_agrid)
    assert len(tilde.steps) == len(disc_family.systems) == 9
    vals = tilde.eval_on(disc_agrid)
    assert np.allclose(vals, 9.0 * np.eye(2), atol=1e-10)
    inv_vals = tilde.inv(disc_agrid.nodes[:64])
    assert np.allclose(inv_vals, np.eye(2) / 9.0, atol=1e-12)


def test_step_b2_check_stays_below_cap(disc_agrid, disc_family):
    W = scalar_power(0.5)
    step = weights.build_step_weight(W, disc_family.base[0], disc_agrid)
    ratio = weights.step_b2_check(W, step, disc_agrid)
    assert 0.2 < ratio <= 1.05


# ---------------------------------------------------------------------------
# omega fields, corona decomposition, reverse Holder
# ---------------------------------------------------------------------------

def _omega(disc_agrid, disc_family, alpha, level=0, index=0):
    W = scalar_power(alpha)
    sys0 = disc_family.base[0]
    step = weights.build_step_weight(W, sys0, disc_agrid)
    v = np.array([1.0])
    return weights.omega_field(step, dyadic.Tent(sys0, level, index), v)


def test_omega_of_identity_is_flat(disc_agrid, disc_family):
    W = weights.identity_weight(2)
    sys0 = disc_family.base[0]
    step = weights.build_step_weight(W, sys0, disc_agrid)
    v = np.array([1.0, 1.0]) / np.sqrt(2.0)
    om = weights.omega_field(step, dyadic.Tent(sys0, 0, 0), v)
    dec = weights.corona_decompose(om, 4.0)
    assert dec.n_stopping == 0
    assert all(r <= 0.25 for r in dec.packing_ratios)


def test_corona_packing_on_power_weight(disc_agrid, disc_family):
    om = _omega(disc_agrid, disc_family, -0.75)
    dec = weights.corona_decompose(om, 2.0)
    assert all(r <= 0.5 for r in dec.packing_ratios)
    assert dec.threshold == 2.0


def test_corona_rejects_small_threshold(disc_agrid, disc_family):
    om = _omega(disc_agrid, disc_family, 0.5)
    with pytest.raises(DomainParameterError):
        weights.corona_decompose(om, 0.9)


def test_reverse_holder_identity_hits_cap(disc_agrid, disc_family):
    om = _omega(disc_agrid, disc_family, 0.0)
    assert weights.reverse_holder_exponent(om) == pytest.approx(3.0)


def test_reverse_holder_gap_scales_with_b2(disc_agrid, disc_family):
    b2 = weights.b2_constant(scalar_power(0.75), disc_agrid,
                             disc_family.systems)
    om = _omega(disc_agrid, disc_family, 0.75)
    r = weights.reverse_holder_exponent(om)
    assert r - 1.0 >= 0.01 / b2


# ---------------------------------------------------------------------------
# dyadic maximal function
# ---------------------------------------------------------------------------

def test_maximal_of_constant_is_constant(disc_agrid, disc_family):
    vals = np.full(len(disc_agrid), 2.5)
    out = weights.dyadic_maximal(vals, disc_family.base[0], disc_agrid)
    assert np.allclose(out, 2.5, rtol=1e-12)


def test_maximal_dominates_global_average(disc_agrid, disc_family, rng):
    vals = rng.uniform(0.0, 1.0, size=len(disc_agrid))
    out = weights.dyadic_maximal(vals, disc_family.base[0], disc_agrid)
    avg = float(disc_agrid.weights @ vals) / float(disc_agrid.weights.sum())
    assert np.all(out >= avg - 1e-12)
    assert np.all(out <= vals.max() + 1e-12)

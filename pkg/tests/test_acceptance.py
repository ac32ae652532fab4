"""The twelve acceptance checks at contract resolution.

One test per numbered criterion, executed in order against a shared lab
so the expensive artifacts (the default sweep and its refinement reruns)
are computed once.  A failing criterion reports its full measurement
line, not just a bare assert.
"""
import pytest

from bergmanlab import acceptance


@pytest.fixture(scope="module")
def lab():
    return acceptance.AcceptanceLab()


def test_criteria_registry_is_complete():
    numbers = [n for n, _, _ in acceptance._CRITERIA]
    assert sorted(numbers) == list(range(1, 13))


def _run(lab, number):
    res = acceptance.run_criterion(lab, number)
    assert res.passed, res.line()


def test_criterion_01_unweighted_norm_calibration(lab):
    _run(lab, 1)


def test_criterion_02_b2_closed_form_calibration(lab):
    _run(lab, 2)


def test_criterion_03_quadratic_norm_bound(lab):
    _run(lab, 3)


def test_criterion_04_three_halves_chain(lab):
    _run(lab, 4)


def test_criterion_05_transfer_constant(lab):
    _run(lab, 5)


def test_criterion_06_sparse_domination_census(lab):
    _run(lab, 6)


def test_criterion_07_step_weight_ratio_cap(lab):
    _run(lab, 7)


def test_criterion_08_reverse_holder_gap(lab):
    _run(lab, 8)


def test_criterion_09_corona_packing_exact(lab):
    _run(lab, 9)


def test_criterion_10_embedding_degree_stability(lab):
    _run(lab, 10)


def test_criterion_11_carleson_below_packing(lab):
    _run(lab, 11)


def test_criterion_12_dyadic_structure_at_depth(lab):
    _run(lab, 12)

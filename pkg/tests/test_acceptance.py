"""Acceptance criteria AC1-AC12, one test each.

Every test prints a single PASS/FAIL line followed by its criteria, then
asserts that all criteria passed at the stated tolerances.
"""
import pytest

from bbmspread.harness import acceptance as A


def _run(check):
    res = check()
    print()
    print(res.line())
    print(res.details())
    assert res.passed, res.line()


def test_ac1_closed_forms_and_merge_limits():
    _run(A.ac1)


def test_ac2_thresholds_and_matching_vs_grid():
    _run(A.ac2)


def test_ac3_single_atom_growth_rates():
    _run(A.ac3)


def test_ac4_two_atom_growth_rates():
    _run(A.ac4)


def test_ac5_population_growth_dirac():
    _run(A.ac5)


def test_ac6_martingale_mean():
    _run(A.ac6)


def test_ac7_spread_rates_dirac():
    _run(A.ac7)


def test_ac8_hit_probability_decay():
    _run(A.ac8)


def test_ac9_directional_uniformity_d2():
    _run(A.ac9)


def test_ac10_fkpp_front_and_tail():
    _run(A.ac10)


def test_ac11_property_suites():
    _run(A.ac11)


def test_ac12_subcritical_d3():
    _run(A.ac12)


@pytest.mark.parametrize("aid", sorted(A.ALL_CHECKS))
def test_every_check_is_registered(aid):
    assert aid.startswith("AC") and callable(A.ALL_CHECKS[aid])

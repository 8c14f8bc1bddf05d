import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bbmspread import bbm_sim as B
from bbmspread import feynman_kac as FK
from bbmspread import measures as M


@pytest.mark.parametrize("c,t", [(0.5, 1.0), (1.0, 3.0), (2.0, 10.0), (1.0, 60.0)])
def test_quadrature_matches_closed_form(c, t):
    q = FK.fk_quadrature_dirac1d(c, t)
    assert q.log_value == pytest.approx(FK.log_fk_closed_form_dirac1d(c, t), rel=1e-9)


def test_closed_form_small_t_and_zero_coupling():
    assert FK.fk_closed_form_dirac1d(1.0, 1e-10).value == pytest.approx(1.0, abs=1e-4)
    assert FK.fk_quadrature_dirac1d(0.0, 2.0).value == pytest.approx(1.0, rel=1e-8)
    with pytest.raises(ValueError):
        FK.fk_quadrature_dirac1d(1.0, 0.0)


def test_event_variants():
    c, t = 1.0, 4.0
    full = FK.fk_quadrature_dirac1d(c, t).value
    assert FK.fk_quadrature_dirac1d(c, t, FK.norm_ge(0.0)).value == pytest.approx(full, rel=1e-9)
    r = 2.0
    two = FK.fk_quadrature_dirac1d(c, t, FK.norm_ge(r)).value
    one = FK.fk_quadrature_dirac1d(c, t, FK.dir_ge((1.0,), r)).value
    assert one == pytest.approx(two / 2, rel=1e-9)
    assert FK.fk_quadrature_dirac1d(c, t, FK.norm_ge(1e4)).value == 0.0
    with pytest.raises(ValueError):
        FK.fk_quadrature_dirac1d(c, t, FK.dir_ge((0.5,), r))


def test_zero_coupling_event_is_gaussian_tail():
    r, t = 1.5, 2.0
    v = FK.fk_quadrature_dirac1d(0.0, t, FK.norm_ge(r)).value
    assert v == pytest.approx(math.erfc(r / math.sqrt(2 * t)), rel=1e-8)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.2, 2.0), st.floats(0.5, 8.0), st.floats(0.0, 3.0), st.floats(0.01, 2.0))
def test_event_value_decreases_with_radius(c, t, r, dr):
    a = FK.fk_quadrature_dirac1d(c, t, FK.norm_ge(r), epsrel=1e-8).value
    b = FK.fk_quadrature_dirac1d(c, t, FK.norm_ge(r + dr), epsrel=1e-8).value
    assert b <= a * (1 + 1e-7)


def test_bridge_monte_carlo_agrees_with_quadrature():
    # exact per-step local time: an independent route to the same expectation
    rng = np.random.default_rng(0)
    for ev in (FK.ALL, FK.norm_ge(1.0)):
        mc = FK.fk_mc(M.dirac(1.0), [0.0], 1.0, ev, n_paths=20000, dt=0.02, rng=rng,
                      mode="bridge")
        q = FK.fk_quadrature_dirac1d(1.0, 1.0, ev).value
        assert abs(mc.value - q) <= 4 * mc.stderr


def test_band_monte_carlo_agrees_with_quadrature():
    rng = np.random.default_rng(1)
    mc = FK.fk_mc(M.dirac(1.0), [0.0], 1.0, n_paths=10000, dt=1e-3, eps=0.02, rng=rng)
    q = FK.fk_closed_form_dirac1d(1.0, 1.0).value
    assert abs(mc.value - q) <= 4 * mc.stderr + 0.01 * q


def test_flat_density_is_deterministic():
    mc = FK.fk_mc(M.ball(0.5, 1e3, 2), [0.0, 0.0], 2.0, n_paths=200, dt=0.01,
                  rng=np.random.default_rng(2))
    assert mc.value == pytest.approx(math.e, rel=1e-9)
    assert mc.stderr < 1e-9


def test_mc_directional_event_in_d2():
    # flat rate: the tilt is trivial, so the value is e^{ct} times a Gaussian tail
    rng = np.random.default_rng(3)
    u = (math.cos(0.4), math.sin(0.4))
    mc = FK.fk_mc(M.ball(0.5, 1e3, 2), [0.0, 0.0], 2.0, FK.dir_ge(u, 1.0), n_paths=20000,
                  dt=0.05, rng=rng)
    ref = math.e * 0.5 * math.erfc(1.0 / math.sqrt(2 * 2.0))
    assert abs(mc.value - ref) <= 4 * mc.stderr


def test_tilted_probability():
    m = M.dirac(1.0)
    assert FK.tilted_prob(m, [0.0], 5.0, 0.0).ratio == 1.0
    p = FK.tilted_prob(m, [0.0], 5.0, 0.3)
    assert 0 < p.ratio < 1
    assert p.ratio == pytest.approx(p.numerator.value / p.denominator.value, rel=1e-9)
    far = FK.tilted_prob(m, [0.0], 5.0, 2.0)
    assert far.ratio < p.ratio


def test_fk_value_dispatch():
    m = M.dirac(1.0)
    assert FK.fk_value(m, [0.0], 2.0).method == "quadrature"
    assert FK.fk_value(m, [0.0], 0.0).value == 1.0
    assert FK.fk_value(m, [0.0], 0.0, FK.norm_ge(1.0)).value == 0.0
    est = FK.fk_value(m, [0.5], 1.0, rng=np.random.default_rng(4), n_paths=500, dt=0.01)
    assert est.method == "mc"


def test_validation():
    with pytest.raises(ValueError):
        FK.Event("bogus")
    with pytest.raises(ValueError):
        FK.Event("dir_ge", 1.0)
    with pytest.raises(ValueError):
        FK.FkEstimate(-1.0, 0.0, "mc", 1.0, (0.0,), "all")
    with pytest.raises(ValueError):
        FK.fk_mc(M.dirac(1.0), [0.0], 1.0, n_paths=10)
    with pytest.raises(ValueError):
        FK.fk_mc(M.dirac(1.0), [0.0, 0.0], 1.0)
    with pytest.raises(ValueError):
        FK.fk_mc(M.ball(1.0, 1.0, 1), [0.0], 1.0, mode="bridge")


def test_duality_check_small_ensemble():
    m = M.dirac(1.0)
    settings = B.SimSettings(horizon=3.0, record_every=1.0, deltas=(0.0, 0.5))
    ens = B.run_ensemble(settings, m, M.OffspringLaw.binary(), None, 3000, 5)
    rows = FK.duality_check(ens, m, [0.0], [1.0, 3.0], [FK.ALL])
    rows += FK.duality_check(ens, m, [0.0], [3.0], [FK.norm_ge(1.5)])
    assert len(rows) == 3
    assert all(r.passed for r in rows)
    with pytest.raises(ValueError):
        FK.duality_check(ens, m, [0.0], [2.5], [FK.ALL])
    with pytest.raises(ValueError):
        FK.duality_check(ens, m, [0.0], [3.0], [FK.norm_ge(0.7)])

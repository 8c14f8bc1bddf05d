import math

import numpy as np
import pytest
from scipy import stats

from bbmspread import bbm_sim as B
from bbmspread import feynman_kac as FK
from bbmspread import measures as M
from bbmspread import spectral as S

BINARY = M.OffspringLaw.binary()


def _no_branch_dirac(c, t):
    # E exp(-c l_t) with l_t ~ |N(0, t)|
    return math.exp(c * c * t / 2) * math.erfc(c * math.sqrt(t / 2))


def test_first_branch_flat_density_is_exponential():
    # constant rate 1 on a region the particles never leave: clock Exp(1)
    rng = np.random.default_rng(0)
    m = M.ball(1.0, 1e3, 1)
    t = B.first_branch_times(m, [0.0], 0.01, 3000, rng)
    assert np.all(np.isfinite(t))
    # discretised at multiples of dt: compare to the ceiling of an Exp(1)
    assert stats.kstest(t - 0.005, "expon").pvalue > 0.01


def test_first_branch_dirac_law():
    rng = np.random.default_rng(1)
    t = B.first_branch_times(M.dirac(1.0), [0.0], 1e-4, 4000, rng, eps=5e-3,
                             max_steps=int(1.0 / 1e-4))
    frac = np.mean(np.isnan(t))
    assert frac == pytest.approx(_no_branch_dirac(1.0, 1.0), abs=0.03)


def test_exact_skeleton_no_branch_probability():
    rng = np.random.default_rng(2)
    n = 20000
    first = np.array([B.exact_event_skeleton_dirac1d(1.0, 0.0, 1.0, rng).times.size == 0
                      for _ in range(n)])
    assert first.mean() == pytest.approx(_no_branch_dirac(1.0, 1.0), abs=4 * math.sqrt(0.25 / n))


def test_skeleton_count_and_validation():
    sk = B.EventSkeleton(np.array([0.5, 1.0, 2.0]), 3.0)
    assert sk.count([0.0, 0.5, 1.5, 3.0]).tolist() == [1, 2, 3, 4]
    with pytest.raises(ValueError):
        B.EventSkeleton(np.array([1.0, 1.0]), 2.0)


def test_exact_engine_mean_population():
    settings = B.SimSettings(horizon=3.0, record_every=1.0)
    ens = B.run_ensemble(settings, M.dirac(1.0), BINARY, None, 4000, 7)
    agg = ens.aggregate["Z"]
    for k, t in enumerate(ens.t):
        ref = FK.fk_closed_form_dirac1d(1.0, t).value
        assert abs(agg["mean"][k] - ref) <= 4 * agg["se"][k] + 1e-12


def test_exact_engine_martingale():
    spec = S.lambda_single_dirac(1.0)
    settings = B.SimSettings(horizon=4.0, record_every=2.0)
    ens = B.run_ensemble(settings, M.dirac(1.0), BINARY, spec, 3000, 8)
    agg = ens.aggregate["M"]
    assert agg["mean"][0] == pytest.approx(1.0)
    for k in (1, 2):
        assert abs(agg["mean"][k] - 1.0) <= 4 * agg["se"][k]


def test_discretized_flat_rate_growth():
    # E Z_t = exp(c t) when the rate is constant where the particles live
    settings = B.SimSettings(horizon=2.0, record_every=1.0, dt=0.01, engine="discretized")
    ens = B.run_ensemble(settings, M.ball(0.5, 1e3, 2), BINARY, None, 1500, 9)
    agg = ens.aggregate["Z"]
    for k, t in enumerate(ens.t):
        assert abs(agg["mean"][k] - math.exp(0.5 * t)) <= 4 * agg["se"][k] + 1e-12


def test_discretized_matches_exact_engine():
    # the two engines simulate the same law for one atom
    kw = dict(horizon=2.0, record_every=1.0, dt=1e-3, eps=0.02)
    m = M.dirac(1.0)
    ex = B.run_ensemble(B.SimSettings(engine="exact", **kw), m, BINARY, None, 1500, 10)
    di = B.run_ensemble(B.SimSettings(engine="discretized", **kw), m, BINARY, None, 1500, 11)
    a, b = ex.aggregate["Z"], di.aggregate["Z"]
    assert abs(a["mean"][-1] - b["mean"][-1]) <= 4 * math.hypot(a["se"][-1], b["se"][-1])


@pytest.mark.parametrize("engine", ["exact", "discretized"])
def test_determinism_and_order_invariance(engine):
    settings = B.SimSettings(horizon=2.0, record_every=0.5, engine=engine, deltas=(0.3,),
                             directions=((1.0,),))
    m = M.dirac(1.0)
    a = B.run_ensemble(settings, m, BINARY, None, 6, 42)
    b = B.run_ensemble(settings, m, BINARY, None, 6, 42, order=[5, 3, 1, 0, 2, 4])
    for ra, rb in zip(a.replicas, b.replicas):
        np.testing.assert_array_equal(ra.Z, rb.Z)
        np.testing.assert_array_equal(ra.L, rb.L)
        np.testing.assert_array_equal(ra.Zd, rb.Zd)
    c = B.run_ensemble(settings, m, BINARY, None, 6, 43)
    assert any(not np.array_equal(x.L, y.L) for x, y in zip(a.replicas, c.replicas))
    with pytest.raises(ValueError):
        B.run_ensemble(settings, m, BINARY, None, 6, 42, order=[0, 0, 1, 2, 3, 4])


def test_recorded_statistics_are_consistent():
    settings = B.SimSettings(horizon=3.0, record_every=0.5, deltas=(0.0, 0.2),
                             directions=((1.0, 0.0), (0.0, 1.0)), dt=0.01)
    r = B.run_replica(settings, M.ball(1.0, 1.0, 2), BINARY, None, np.random.default_rng(3))
    assert r.Z[0] == 1 and np.all(np.diff(r.Z) >= 0)
    # Z_t(0) counts everyone; directional maxima never exceed the norm maximum
    np.testing.assert_array_equal(r.Zd[:, 0], r.Z)
    assert np.all(r.Lr <= r.L[:, None] + 1e-12)
    assert np.all(r.Zdr[:, :, 1] <= r.Zd[:, 1][:, None])
    np.testing.assert_allclose(np.linalg.norm(r.argmax, axis=2).max(axis=1) <= r.L + 1e-12, True)
    assert np.all(np.isnan(r.R))


def test_population_cap():
    settings = B.SimSettings(horizon=10.0, record_every=1.0, population_cap=5)
    r = B.run_replica(settings, M.dirac(2.0), BINARY, None, np.random.default_rng(4))
    assert r.capped
    assert np.isnan(r.Z[-1]) and r.Z[0] == 1
    pop = B.init_population([0.0], np.random.default_rng(5), 1)
    rng = np.random.default_rng(6)
    with pytest.raises(B.PopulationCapExceeded):
        for _ in range(100000):
            B.step(pop, 1e-3, M.ball(5.0, 10.0, 1), BINARY, rng, cap=3)
    assert pop.capped


def test_population_storage_grows():
    pop = B.init_population([0.0, 0.0], np.random.default_rng(0), 2)
    rng = np.random.default_rng(1)
    for _ in range(300):
        B.step(pop, 0.01, M.ball(2.0, 50.0, 2), BINARY, rng)
    assert pop.size > 16
    assert pop.positions.shape == (pop.size, 2)
    ids = [p.id for p in pop.particles()]
    assert len(set(ids)) == len(ids)


def test_settings_validation():
    with pytest.raises(ValueError):
        B.SimSettings(horizon=1.0, record_every=0.3).record_times()
    with pytest.raises(ValueError):
        B.resolve_engine(B.SimSettings(engine="exact"), M.ball(1.0, 1.0, 1))
    with pytest.raises(ValueError):
        B.resolve_engine(B.SimSettings(engine="bogus"), M.dirac(1.0))
    assert B.resolve_engine(B.SimSettings(), M.dirac(1.0)) == "exact"
    assert B.SimSettings(horizon=2, record_every=0.5, record_from=1.0).record_times().tolist() \
        == [0.0, 1.0, 1.5, 2.0]


def test_fit_slope_and_rate():
    t = np.linspace(0, 10, 21)
    f = B.fit_slope(t, 3 * t + 1, window=(2, 8), theory=3.0)
    assert f.slope == pytest.approx(3.0) and f.intercept == pytest.approx(1.0)
    assert f.within(1e-9) and f.window == (2, 8)
    r = B.estimate_rate(t, 5 * np.exp(-0.25 * t))
    assert r.slope == pytest.approx(-0.25)
    with pytest.raises(ValueError):
        B.estimate_rate(t, np.zeros_like(t))
    with pytest.raises(ValueError):
        B.fit_slope(t, t, window=(20, 30))

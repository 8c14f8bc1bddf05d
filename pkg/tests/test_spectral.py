import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, optimize, special, stats

from bbmspread import measures as M
from bbmspread import spectral as S

# Frozen reference values.  Each was produced by one solver and confirmed by
# an independent one (noted alongside); the tests below recompute them.
LAMBDA_TWO_DIRACS_1_1_A1 = -0.6147825362879    # s = 1 + exp(-2s), brentq
LAMBDA_LATTICE_P2 = -0.6198430600              # Perron root; grid agrees to 1e-5
LAMBDA_SHELL_D3_C2_R1 = -1.9214766             # matching root; radial grid -1.92147
LAMBDA_BALL_D3_C2_R1 = -0.2035507              # matching root; radial grid -0.2035508
LAMBDA_BALL_D1_C1_R1 = -0.60390                # k tan k = s; line grid -0.60389


def _quiet_grid(*a, **k):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return S.lambda_grid(*a, **k)


@pytest.mark.parametrize("c", [0.5, 1.0, 2.0])
def test_single_dirac_closed_form(c):
    r = S.lambda_single_dirac(c, 0.3)
    assert r.lam == -c * c / 2
    h = r.eigenfunction
    assert h(0.3) == pytest.approx(math.sqrt(c))
    # L2 normalisation: int c exp(-2c|x|) dx = 1
    assert integrate.quad(lambda x: h(x) ** 2, -np.inf, np.inf)[0] == pytest.approx(1.0)


def test_two_diracs_symmetric_oracle():
    s = optimize.brentq(lambda s: s - (1 + math.exp(-2 * s)), 0.5, 3.0, xtol=1e-15)
    r = S.lambda_two_diracs(1.0, 1.0, 1.0)
    assert r.lam == pytest.approx(-s * s / 2, abs=1e-12)
    assert r.lam == pytest.approx(LAMBDA_TWO_DIRACS_1_1_A1, abs=1e-12)
    at = S.lambda_atomic([-1.0, 1.0], [1.0, 1.0])
    assert at.lam == pytest.approx(r.lam, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(0.2, 3.0), st.floats(0.05, 4.0))
def test_two_diracs_symmetry_and_bounds(c1, c2, a):
    lo, hi = sorted((c1, c2))
    r = S.lambda_two_diracs(lo, hi, a).lam
    assert S.lambda_atomic([-a, a], [hi, lo]).lam == pytest.approx(r, abs=1e-10)
    # between the stronger single atom and the merged atom
    assert -(c1 + c2) ** 2 / 2 - 1e-12 <= r <= -max(c1, c2) ** 2 / 2 + 1e-12
    at = S.lambda_atomic([-a, a], [c1, c2]).lam
    assert at == pytest.approx(r, abs=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.floats(-5, 5), st.booleans())
def test_atomic_translation_reflection_invariance(shift, flip):
    locs = np.array([-0.7, 0.1, 1.3])
    w = np.array([0.4, 1.1, 0.6])
    base = S.lambda_atomic(locs, w).lam
    sign = -1.0 if flip else 1.0
    assert S.lambda_atomic(sign * locs + shift, w).lam == pytest.approx(base, abs=1e-11)


def test_atomic_rejects_d2():
    with pytest.raises(S.SingularKernelError):
        S.lambda_atomic([0.0], [1.0], d=2)


def test_lattice():
    r = S.spectral_for(M.lattice(2.0))
    assert r.method == "atomic_perron"
    assert r.lam == pytest.approx(LAMBDA_LATTICE_P2, abs=1e-9)
    assert S.lattice_residual(2.0, r) < 1e-12
    g = _quiet_grid(M.lattice(2.0), "line_1d", 30.0, 6001)
    assert g.lam == pytest.approx(r.lam, rel=1e-4)


def test_shell_d3():
    r = S.lambda_delta_shell_d3(2.0, 1.0)
    s = r.s
    assert s * (1 + 1 / math.tanh(s)) == pytest.approx(4.0, rel=1e-13)
    assert r.lam == pytest.approx(LAMBDA_SHELL_D3_C2_R1, abs=1e-7)
    g = _quiet_grid(M.sphere(2.0, 1.0, 3), "radial_d3", 30.0, 30001)
    assert g.lam == pytest.approx(r.lam, rel=1e-4)


def test_shell_threshold_and_asymptote():
    assert S.lambda_delta_shell_d3(0.49, 1.0).lam == 0.0
    assert S.lambda_delta_shell_d3(0.49, 1.0).eigenfunction is None
    assert S.lambda_delta_shell_d3(0.51, 1.0).lam < 0
    # just above threshold the bound state is shallow
    assert -S.lambda_delta_shell_d3(0.5001, 1.0).lam < 1e-6
    # strong coupling: s / c -> 1
    assert S.lambda_delta_shell_d3(200.0, 1.0).s / 200.0 == pytest.approx(1.0, rel=1e-9)


def test_ball_d3():
    r = S.lambda_ball_d3(2.0, 1.0)
    assert r.lam == pytest.approx(LAMBDA_BALL_D3_C2_R1, abs=1e-7)
    cstar = S.ball_critical_coupling(1.0)
    assert cstar == pytest.approx(math.pi ** 2 / 8)
    assert S.lambda_ball_d3(0.99 * cstar, 1.0).lam == 0.0
    assert S.lambda_ball_d3(1.01 * cstar, 1.0).lam < 0


def test_ball_d1_oracle():
    r = S.lambda_ball_d1(1.0, 1.0)
    k, s = math.sqrt(2 * (r.lam + 1.0)), r.s
    assert k * math.tan(k) == pytest.approx(s, rel=1e-12)
    assert r.lam == pytest.approx(LAMBDA_BALL_D1_C1_R1, abs=1e-5)


def test_circle_d2_against_direct_integral():
    c, R = 1.0, 1.0
    r = S.lambda_circle_d2(c, R)
    s = r.s
    # Birman-Schwinger: c * int_circle G(x, y) dsigma(y) = 1 with G = K0(s|x-y|)/pi
    f = lambda th: special.k0(s * 2 * R * math.sin(th / 2)) / math.pi * R
    val = c * integrate.quad(f, 0, 2 * math.pi, points=[0, 2 * math.pi], limit=200)[0]
    assert val == pytest.approx(1.0, rel=1e-7)


def _radial_pde_residual(r, d, c, R, at):
    """-(1/2) Laplacian h - V h - lambda h at radius `at` by central differences."""
    h = r.eigenfunction
    e = 1e-4

    def prof(x):
        p = np.zeros((1, d))
        p[0, 0] = x
        return float(h(p)[0])

    u0, up, um = prof(at), prof(at + e), prof(at - e)
    lap = (up - 2 * u0 + um) / e ** 2 + (d - 1) / at * (up - um) / (2 * e)
    V = c if at < R else 0.0
    return (-0.5 * lap - V * u0 - r.lam * u0) / max(abs(u0), 1e-300)


@pytest.mark.parametrize("d,solver", [(1, S.lambda_ball_d1), (2, S.lambda_ball_d2),
                                      (3, S.lambda_ball_d3)])
def test_ball_eigenfunction_solves_the_equation(d, solver):
    c, R = 2.0, 1.0
    r = solver(c, R)
    for at in (0.3, 0.7, 1.5, 2.5):
        assert abs(_radial_pde_residual(r, d, c, R, at)) < 1e-5
    h = r.eigenfunction
    # continuity across the boundary
    p_in, p_out = np.zeros((1, d)), np.zeros((1, d))
    p_in[0, 0], p_out[0, 0] = R - 1e-9, R + 1e-9
    assert float(h(p_in)[0]) == pytest.approx(float(h(p_out)[0]), rel=1e-6)
    assert r.eigenfunction.l2_norm_sq() == pytest.approx(1.0)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.5, 3.0), st.floats(0.5, 2.0), st.sampled_from([1, 2, 3]))
def test_ball_brownian_scaling(c, a, d):
    solver = {1: S.lambda_ball_d1, 2: S.lambda_ball_d2, 3: S.lambda_ball_d3}[d]
    c = c + (S.ball_critical_coupling(1.0, 3) if d == 3 else 0.0)
    base = solver(c, 1.0).lam
    # x -> a x: radius a, coupling c / a^2, eigenvalue lambda / a^2
    assert solver(c / a ** 2, a).lam == pytest.approx(base / a ** 2, rel=1e-9, abs=1e-14)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.6, 4.0), st.floats(0.5, 2.0))
def test_shell_brownian_scaling(c, a):
    base = S.lambda_delta_shell_d3(c, 1.0).lam
    assert S.lambda_delta_shell_d3(c / a, a).lam == pytest.approx(base / a ** 2, rel=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(1.01, 2.0))
def test_lambda_decreases_with_coupling(c, f):
    assert S.lambda_ball_d2(c * f, 1.0).lam < S.lambda_ball_d2(c, 1.0).lam
    assert S.lambda_two_diracs(c, c * f, 0.5).lam < S.lambda_two_diracs(c, c, 0.5).lam


def test_grid_single_dirac_and_thresholds():
    g = _quiet_grid(M.dirac(1.0), "line_1d", 30.0, 6001)
    assert g.lam == pytest.approx(-0.5, abs=5e-4)
    thr = S.grid_threshold(lambda c: M.ball(c, 1.0, 3), 0.6, 2.4)
    assert thr == pytest.approx(math.pi ** 2 / 8, rel=0.01)
    thr = S.grid_threshold(lambda c: M.sphere(c, 1.0, 3), 0.1, 2.0)
    assert thr == pytest.approx(0.5, rel=0.1)


def test_grid_warns_for_small_box():
    with pytest.warns(RuntimeWarning):
        S.lambda_grid(M.dirac(0.3), "line_1d", 5.0, 2001)


def test_spectral_for_dispatch_and_offspring_scaling():
    assert S.spectral_for(M.dirac(1.0)).method == "closed_form"
    # nu = (Q - 1) mu: mean 3 doubles the coupling
    r = S.spectral_for(M.dirac(1.0), M.OffspringLaw.from_mapping({3: 1.0}))
    assert r.lam == pytest.approx(-2.0)
    assert S.spectral_for(M.dirac(1.0), M.OffspringLaw.from_mapping({1: 1.0})).lam == 0.0
    assert S.spectral_for(M.sphere(1.0, 1.0, 2)).method == "transcendental"


# resolvent and rate functions ----------------------------------------------

@pytest.mark.parametrize("d", [1, 2, 3])
def test_resolvent_matches_heat_kernel_integral(d):
    alpha, r = 0.7, 1.3
    f = lambda t: math.exp(-alpha * t) * (2 * math.pi * t) ** (-d / 2) * math.exp(-r * r / (2 * t))
    ref = integrate.quad(f, 0, np.inf, limit=200)[0]
    x = np.zeros(d)
    y = np.zeros(d)
    y[0] = r
    assert S.green_resolvent(d, alpha, x, y) == pytest.approx(ref, rel=1e-8)


def test_far_field():
    for d in (1, 3):
        assert S.green_far_field(d, 0.5, 7.0) == pytest.approx(
            S.green_resolvent(d, 0.5, np.zeros(d), np.r_[7.0, np.zeros(d - 1)]), rel=1e-12)
    ratio = S.green_far_field(2, 0.5, 40.0) / S.green_resolvent(2, 0.5, [0, 0], [40.0, 0])
    assert ratio == pytest.approx(1.0, abs=0.01)


@given(st.floats(-5.0, -0.01), st.floats(0.0, 5.0))
def test_big_lambda_invariants(lam, delta):
    s = math.sqrt(-2 * lam)
    v = math.sqrt(-lam / 2)
    b = S.big_lambda(lam, delta)
    if abs(delta - v) > 1e-9:
        assert (b < 0) == (delta < v)
    assert S.big_lambda(lam, v) == pytest.approx(0.0, abs=1e-12)
    assert S.big_lambda(lam, s) == pytest.approx(0.5 * s * s, abs=1e-12)
    if 1e-6 < delta < s:
        p0 = S.p_opt(lam, delta)
        assert 0 < p0 < 1
        assert float(S.split_objective(p0, lam, delta)) == pytest.approx(-b, abs=1e-12)
        grid = np.linspace(0, 0.999, 400)
        assert np.all(S.split_objective(grid, lam, delta) <= -b + 1e-12)


def test_p_opt_reference():
    assert S.p_opt(-0.5, 0.25) == pytest.approx(0.75)
    assert float(S.split_objective(0.75, -0.5, 0.25)) == pytest.approx(0.25)
    assert S.p_opt(-0.5, 1.5) == 0.0


def test_gaussian_tail_closed_forms():
    t = 3.0
    erfc_part = math.sqrt(math.pi / 2) * math.erfc(t / math.sqrt(2))
    assert S.gaussian_tail(t, 1) == pytest.approx(erfc_part, rel=1e-10)
    assert S.gaussian_tail(t, 2) == pytest.approx(math.exp(-t * t / 2), rel=1e-10)
    assert S.gaussian_tail(t, 3) == pytest.approx(t * math.exp(-t * t / 2) + erfc_part,
                                                  rel=1e-10)
    for d in (1, 2, 3):
        assert abs(S.gaussian_tail_ratio(10.0, d) - 1) < 0.015


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([1, 2, 3]), st.floats(0.05, 4.0), st.floats(0.1, 3.0),
       st.floats(0.0, 3.0))
def test_ball_exit_probability(d, t, R, rho):
    x = np.zeros(d)
    x[0] = rho
    p = S.ball_exit_prob(d, t, R, x)
    assert p == pytest.approx(S.ball_exit_prob_ncx2(d, t, R, x), abs=1e-9)
    assert S.ball_tail_monotonicity(d, t, R, x)


def test_ball_exit_origin_is_chi():
    assert S.ball_exit_prob(3, 2.0, 1.5, np.zeros(3)) == pytest.approx(
        stats.chi(3).sf(1.5 / math.sqrt(2.0)), rel=1e-10)

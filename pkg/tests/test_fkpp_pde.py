import math

import numpy as np
import pytest
from scipy.stats import norm

from bbmspread import fkpp_pde as P
from bbmspread import measures as M


def test_heat_flow_without_branching():
    g = P.PdeGrid.for_measure(None, 20.0, 0.02)
    x = g.nodes
    ys = [1.0, 2.5]
    T = 3.0
    u = P.solve_fkpp_1d(g, ys, [T])
    for k, y in enumerate(ys):
        ref = norm.cdf((y - x) / math.sqrt(T)) - norm.cdf((-y - x) / math.sqrt(T))
        assert np.max(np.abs(u[0, k] - ref)) < 1e-4


def test_heat_flow_right_version():
    g = P.PdeGrid.for_measure(None, 20.0, 0.02)
    x = g.nodes
    u = P.solve_fkpp_1d(g, [1.0], [2.0], version="R")
    ref = norm.cdf((1.0 - x) / math.sqrt(2.0))
    inner = np.abs(x) < 10
    assert np.max(np.abs(u[0, 0, inner] - ref[inner])) < 1e-4
    assert u[0, 0, 0] == 1.0 and u[0, 0, -1] == 0.0


def test_solution_bounds_and_monotonicity():
    g = P.PdeGrid.for_measure(M.dirac(1.0), 20.0, 0.02)
    ys = np.linspace(0.5, 6.0, 12)
    u = P.solve_fkpp_1d(g, ys, [2.0, 6.0])
    assert u.min() >= 0 and u.max() <= 1
    i0 = int(np.argmin(np.abs(g.nodes)))
    assert np.all(np.diff(u[:, :, i0], axis=1) >= -1e-12)
    # more time, smaller probability of staying inside
    assert np.all(u[1, :, i0] <= u[0, :, i0] + 1e-12)


def test_more_branching_lowers_u():
    ys, Ts = [3.0], [5.0]
    lo = P.solve_fkpp_1d(P.PdeGrid.for_measure(M.dirac(0.5), 20.0, 0.02), ys, Ts)
    hi = P.solve_fkpp_1d(P.PdeGrid.for_measure(M.dirac(1.5), 20.0, 0.02), ys, Ts)
    i0 = int(np.argmin(np.abs(np.linspace(-20, 20, lo.shape[2]))))
    assert hi[0, 0, i0] < lo[0, 0, i0]


def test_single_child_law_is_heat_flow():
    # geometric(0) puts mass 1 on one child: F(u) = u and the reaction vanishes
    g = P.PdeGrid.for_measure(M.dirac(1.0), 15.0, 0.05)
    free = P.PdeGrid(g.X, g.n, g.dt, np.zeros(g.n))
    a = P.solve_fkpp_1d(g, [2.0], [3.0], offspring=M.OffspringLaw.geometric(0.0))
    b = P.solve_fkpp_1d(free, [2.0], [3.0])
    np.testing.assert_allclose(a, b, atol=1e-13)
    c = P.solve_fkpp_1d(g, [2.0], [3.0], offspring=M.OffspringLaw.geometric(0.5))
    assert c.min() >= 0 and np.all(c <= b + 1e-12)


def test_front_grid_convergence_and_mollifier_sensitivity():
    ys = np.linspace(2.0, 8.0, 25)
    fronts = {}
    for h, w in ((0.04, 0.05), (0.02, 0.05), (0.02, 0.025)):
        g = P.PdeGrid.for_measure(M.dirac(1.0), 30.0, h, width=w)
        fronts[h, w] = P.front_curve(g, 0.0, ys, [10.0]).y_half(10.0)
    assert abs(fronts[0.04, 0.05] - fronts[0.02, 0.05]) < 0.02
    assert abs(fronts[0.02, 0.025] - fronts[0.02, 0.05]) < 0.1
    # narrower bumps approach the atom and its larger eigenvalue
    assert fronts[0.02, 0.025] >= fronts[0.02, 0.05] - 1e-3


def test_front_missing_before_crossing():
    g = P.PdeGrid.for_measure(M.dirac(1.0), 20.0, 0.05)
    fc = P.front_curve(g, 0.0, [10.0, 12.0], [1.0])
    assert fc.y_half(1.0) is None
    with pytest.raises(KeyError):
        fc.y_half(2.0)


def test_tail_decay_is_exponential():
    g = P.PdeGrid.for_measure(M.dirac(1.0), 30.0, 0.05)
    td = P.tail_decay_check(g, 0.0, 0.75, np.arange(4.0, 13.0, 2.0))
    assert not td.truncated
    assert td.fit.slope < 0
    assert np.all(np.diff(td.tail) < 0)


@pytest.mark.parametrize("a", [0.0, 0.013, -1.237])
def test_grid_scale_deposit_keeps_mass_and_position(a):
    x = np.linspace(-5, 5, 501)
    h = x[1] - x[0]
    V = P.mollified_potential(x, [a], [1.5], width=0.0)
    assert h * V.sum() == pytest.approx(1.5, rel=1e-12)
    assert h * (x * V).sum() == pytest.approx(1.5 * a, abs=1e-12)
    assert np.count_nonzero(V) <= 2
    with pytest.raises(ValueError):
        P.mollified_potential(x, [7.0], [1.0], width=0.0)


def test_grid_scale_eigenvalue_is_close_to_the_atom():
    # the same point-mass discretisation as the spectral grid: O(h^2) error
    from bbmspread import spectral as S
    g = P.PdeGrid.for_measure(M.dirac(1.0), 30.0, 0.02)
    lam = S.lambda_grid(None, "line_1d", g.X, g.n, potential=g.V[1:-1], eigenfunction=False).lam
    assert lam == pytest.approx(-0.5, abs=1e-4)
    mol = P.PdeGrid.for_measure(M.dirac(1.0).mollified(0.05), 30.0, 0.02)
    assert mol.V.max() == pytest.approx(1 / (0.05 * math.sqrt(2 * math.pi)), rel=1e-6)


def test_ball_potential_mass():
    x = np.linspace(-5, 5, 1001)
    V = P.ball_potential(x, 2.0, 1.03)
    assert (x[1] - x[0]) * V.sum() == pytest.approx(2.0 * 2 * 1.03, rel=1e-9)


def test_grid_validation():
    x = np.linspace(-1, 1, 11)
    with pytest.raises(ValueError):
        P.PdeGrid(1.0, 11, 0.1, -np.ones(11))
    with pytest.raises(ValueError):
        P.PdeGrid(1.0, 11, 0.1, np.full(11, 2.0))
    with pytest.raises(ValueError):
        P.PdeGrid(1.0, 11, 0.01, np.ones(10))
    with pytest.raises(ValueError):
        P.PdeGrid(1.0, 11, 0.01, np.ones(11), mass=5.0)
    g = P.PdeGrid(1.0, 11, 0.01, np.zeros(11))
    with pytest.raises(ValueError):
        P.solve_fkpp_1d(g, [0.5], [0.015])
    with pytest.raises(ValueError):
        P.solve_fkpp_1d(g, [0.5], [1.0], version="Q")
    assert x.size == g.n

"""Acceptance checks AC1-AC12, shared by the test suite and the CLI.

Every check returns an AcceptanceResult holding its criteria; the check
passes only when all of them pass.  Theory values are recomputed from the
spectral solvers, never typed in.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .. import _kernels as K
from .. import feynman_kac as FK
from .. import measures as M
from .. import spectral as S
from ..bbm_sim import SimSettings, estimate_rate, fit_slope, run_ensemble
from ..fkpp_pde import PdeGrid, front_curve, tail_decay_check
from .report import (Criterion, grouped_jackknife, nobranch_fractions, orth_basis,
                     pairwise_agreement)
from .scenarios import ball_coupling_for_lambda


@dataclass
class AcceptanceResult:
    id: str
    title: str
    criteria: list
    runtime: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.criteria) and all(c.passed for c in self.criteria)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        bad = [c.id for c in self.criteria if not c.passed]
        tail = f" (failed: {', '.join(bad)})" if bad else ""
        return f"{flag} {self.id} {self.title} [{self.runtime:.1f}s]{tail}"

    def details(self) -> str:
        return "\n".join("  " + c.line() for c in self.criteria)


def _timed(aid, title, limit=None):
    def deco(fn):
        def run(*args, **kwargs):
            t0 = time.perf_counter()
            crit, info = fn(*args, **kwargs)
            dt = time.perf_counter() - t0
            if limit is not None:
                crit.append(Criterion(f"{aid}.runtime_s", limit, dt, 0.0, "le",
                                      "runtime budget"))
            return AcceptanceResult(aid, title, crit, dt, info)
        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run
    return deco


def _log_points(a=20.0, b=60.0, n=6):
    return np.geomspace(a, b, n)


# ---------------------------------------------------------------------------

@_timed("AC1", "eigenvalue closed forms", limit=1.0)
def ac1():
    """Single-atom closed form, atomic Perron solver, two-atom merge limit."""
    crit = []
    for c in (0.5, 1.0, 2.0):
        closed = S.spectral_for(M.dirac(c)).lam
        crit.append(Criterion(f"AC1.closed[c={c:g}]", -c * c / 2, closed, 1e-12, "abs",
                              "-c^2/2"))
        perron = S.lambda_atomic([0.0], [c]).lam
        crit.append(Criterion(f"AC1.perron[c={c:g}]", closed, perron, 1e-10, "abs",
                              "atomic Perron root vs closed form"))
    for c1, c2 in ((1.0, 1.0), (0.5, 1.5)):
        merged = S.lambda_two_diracs(c1, c2, 1e-8).lam
        crit.append(Criterion(f"AC1.merge[c1={c1:g},c2={c2:g}]", -(c1 + c2) ** 2 / 2, merged,
                              1e-6, "abs", "-(c1+c2)^2/2 as the separation -> 0"))
    return crit, {}


@_timed("AC2", "d=3 thresholds", limit=30.0)
def ac2():
    """Grid thresholds for the ball and the shell, and matching vs grid above them."""
    crit = []
    R = 1.0
    c_star = S.ball_critical_coupling(R, 3)
    ball_thr = S.grid_threshold(lambda c: M.ball(c, R, 3), 0.5 * c_star, 2 * c_star)
    crit.append(Criterion("AC2.ball_threshold", c_star, ball_thr, 0.01, "rel", "pi^2/(8 R^2)"))
    shell_thr = S.grid_threshold(lambda c: M.sphere(c, R, 3), 0.1, 2.0) * R
    crit.append(Criterion("AC2.shell_threshold", 0.5, shell_thr, 0.10, "rel", "cR = (d-2)/2"))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for name, meas, exact in (
                ("shell c=2", M.sphere(2.0, R, 3), S.lambda_delta_shell_d3(2.0, R)),
                ("shell c=1", M.sphere(1.0, R, 3), S.lambda_delta_shell_d3(1.0, R)),
                ("ball c=2", M.ball(2.0, R, 3), S.lambda_ball_d3(2.0, R)),
                ("ball c=3", M.ball(3.0, R, 3), S.lambda_ball_d3(3.0, R))):
            X = max(30.0, 30.0 / math.sqrt(-2 * exact.lam))
            g = S.lambda_grid(meas, "radial_d3", X, 30001, eigenfunction=False)
            crit.append(Criterion(f"AC2.matching_vs_grid[{name}]", g.lam, exact.lam, 5e-3, "rel",
                                  "matching-equation root vs radial grid"))
    return crit, {"ball_threshold": ball_thr, "shell_threshold_cR": shell_thr}


@_timed("AC3", "Feynman-Kac rates by quadrature", limit=60.0)
def ac3():
    """Slopes of log E_0[exp(l_t); |B_t| >= delta t] over [20, 60] for c = 1."""
    c = 1.0
    lam = S.lambda_single_dirac(c).lam
    s = math.sqrt(-2 * lam)
    ts = _log_points()
    crit = []
    info = {}
    for delta, tol in ((0.25, 0.02), (1.5, 0.05)):
        theory = -lam - s * delta if delta <= s else -delta * delta / 2
        logs = [FK.fk_quadrature_dirac1d(c, t, FK.norm_ge(delta * t)).log_value for t in ts]
        f = fit_slope(ts, logs)
        info[f"slope[{delta:g}]"] = f.slope
        crit.append(Criterion(f"AC3.slope[delta={delta:g}]", theory, f.slope, tol, "abs",
                              "-lambda - sqrt(-2 lambda) delta below the kink, -delta^2/2 above"))
    worst = 0.0
    for t in (0.5, 1.0, 5.0, 20.0, 60.0):
        q = FK.fk_quadrature_dirac1d(c, t).log_value
        cf = FK.log_fk_closed_form_dirac1d(c, t)
        worst = max(worst, abs(math.expm1(q - cf)))
    crit.append(Criterion("AC3.closed_vs_quadrature", 0.0, worst, 1e-6, "abs",
                          "2 exp(c^2 t/2) Phi(c sqrt t)", "max relative difference"))
    return crit, info


@_timed("AC4", "tilted-measure rates")
def ac4():
    """Slopes of log Q^(t)(|B_t| >= delta t) over [20, 60] for c = 1."""
    c = 1.0
    mu = M.dirac(c)
    lam = S.lambda_single_dirac(c).lam
    s = math.sqrt(-2 * lam)
    ts = _log_points()
    crit = []
    for delta, tol in ((0.5, 0.02), (1.5, 0.05)):
        theory = -s * delta if delta <= s else lam - delta * delta / 2
        logs = [FK.tilted_prob(mu, 0.0, t, delta).log_ratio for t in ts]
        f = fit_slope(ts, logs)
        crit.append(Criterion(f"AC4.slope[delta={delta:g}]", theory, f.slope, tol, "abs",
                              "-sqrt(-2 lambda) delta below the kink, lambda - delta^2/2 above"))
    return crit, {}


def _dirac_ensemble(replicas, seed, horizon, record_every, deltas=(), directions=(), cap=200_000):
    mu = M.dirac(1.0)
    sp = S.lambda_single_dirac(1.0)
    st = SimSettings(horizon=horizon, record_every=record_every, deltas=tuple(deltas),
                     directions=tuple(directions), population_cap=cap, engine="exact")
    return mu, sp, run_ensemble(st, mu, M.OffspringLaw.binary(), sp, replicas, seed)


@_timed("AC5", "many-to-one duality", limit=300.0)
def ac5(replicas: int = 500, seed: int = 20250):
    """Ensemble mean of Z_t(f) vs the Feynman-Kac value for c = 1."""
    times = (6.0, 10.0)
    r = 2.5
    deltas = [r / t for t in times]
    mu, sp, ens = _dirac_ensemble(replicas, seed, 10.0, 1.0, deltas)
    crit = []
    for t in times:
        rows = FK.duality_check(ens, mu, np.zeros(1), [t], [FK.ALL, FK.norm_ge(r)])
        for row in rows:
            crit.append(Criterion(f"AC5.duality[t={t:g},{row.event}]", row.fk, row.simulated,
                                  3 * row.joint_sigma, "abs", "E_x Z_t(f) = E_x[exp(A_t) f(B_t)]",
                                  "3 joint standard errors"))
    return crit, {"capped": ens.capped}


@_timed("AC6", "additive martingale")
def ac6(replicas: int = 500, seed: int = 20251):
    """E M_t = h(x0) at t = 2, 5, 10."""
    mu, sp, ens = _dirac_ensemble(replicas, seed, 10.0, 1.0)
    h0 = float(sp.eigenfunction(np.zeros(1))[0])
    crit = []
    Mt = ens.stack("M")
    for t in (2.0, 5.0, 10.0):
        i = int(np.argmin(np.abs(ens.t - t)))
        col = Mt[:, i]
        mean, se = float(col.mean()), float(col.std(ddof=1) / math.sqrt(col.size))
        crit.append(Criterion(f"AC6.mean_M[t={t:g}]", h0, mean, 3 * se, "abs",
                              "M_t = exp(lambda t) Z_t(h) has constant mean h(x0)",
                              "3 standard errors"))
    return crit, {"h0": h0}


@_timed("AC7", "spread rates by simulation", limit=600.0)
def ac7(replicas: int = 200, seed: int = 20252):
    """Growth of Z_t^{delta t}, L_t/t and R_t/t for c = 1 over [8, 14]."""
    delta = 0.25
    mu, sp, ens = _dirac_ensemble(replicas, seed, 14.0, 0.5, [delta], [(1.0,)])
    lam, speed = sp.lam, sp.speed
    ts = ens.t
    window = (8.0, 14.0)
    f = estimate_rate(ts, ens.stack("Zd")[:, :, 0].mean(axis=0), window)
    crit = [Criterion("AC7.Z_rate[delta=0.25]", -S.big_lambda(lam, delta), f.slope, 0.08, "abs",
                      "-lambda - sqrt(-2 lambda) delta", "slope of log ensemble-mean count")]
    L = float(ens.stack("L")[:, -1].mean() / 14.0)
    R = float(ens.stack("R")[:, -1].mean() / 14.0)
    crit.append(Criterion("AC7.L_over_t", speed, L, 0.07, "abs", "sqrt(-lambda/2)",
                          "ensemble mean at t=14"))
    crit.append(Criterion("AC7.R_over_t", speed, R, 0.07, "abs", "sqrt(-lambda/2)",
                          "ensemble mean at t=14"))
    return crit, {"capped": ens.capped}


@_timed("AC8", "hit-probability decay")
def ac8(replicas: int = 2000, seed: int = 20253):
    """Decay rate of P(Z_t^{0.6 t} >= 1) over [10, 20] for c = 1."""
    delta = 0.6
    mu, sp, ens = _dirac_ensemble(replicas, seed, 20.0, 1.0, [delta], cap=5_000_000)
    p = np.mean(ens.stack("Zd")[:, :, 0] >= 1, axis=0)
    f = estimate_rate(ens.t, p, (10.0, 20.0))
    crit = [Criterion("AC8.hit_rate", -S.big_lambda(sp.lam, delta), f.slope, 0.05, "abs",
                      "-Lambda_delta", f"stderr {f.stderr:.3g}")]
    crit.append(Criterion("AC8.no_capped_replicas", 0.0, float(ens.capped), 0.0, "abs",
                          "population cap never reached"))
    return crit, {"p": p.tolist()}


@_timed("AC9", "directional uniformity in d=2")
def ac9(replicas: int = 100, seed: int = 20254, dt: float = 2.5e-3):
    """Rates in four directions and the argmax particle direction, ball density with lambda = -1/2."""
    c = ball_coupling_for_lambda(-0.5, 1.0, 2)
    mu = M.ball(c, 1.0, 2)
    sp = S.lambda_ball_d2(c, 1.0)
    dirs = ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))
    st = SimSettings(horizon=14.0, record_every=0.5, dt=dt, deltas=(0.25,), directions=dirs,
                     engine="discretized")
    ens = run_ensemble(st, mu, M.OffspringLaw.binary(), sp, replicas, seed, np.zeros(2))
    ts = ens.t
    series = [ens.stack("Zdr")[:, :, i, 0] for i in range(len(dirs))]
    rates, cov = grouped_jackknife(ts, series, (8.0, 14.0))
    worst = pairwise_agreement(rates, cov)
    crit = [Criterion("AC9.pairwise_sigma", 3.0, worst, 0.0, "le",
                      "equal rates in every direction", "max |r_i - r_j| / sigma_ij")]
    am = ens.stack("argmax")[:, -1] / 14.0
    for i, r in enumerate(dirs):
        r = np.asarray(r)
        along = float(np.mean(am[:, i] @ r))
        crit.append(Criterion(f"AC9.argmax_along[{i}]", sp.speed, along, 0.1, "abs",
                              "sqrt(-lambda/2)", "ensemble mean at t=14"))
        for k, e in enumerate(orth_basis(r)):
            crit.append(Criterion(f"AC9.argmax_orth[{i}.{k}]", 0.0, float(np.mean(am[:, i] @ e)),
                                  0.1, "abs", "0", "ensemble mean at t=14"))
    return crit, {"rates": rates.tolist(), "coupling": c, "capped": ens.capped}


@_timed("AC10", "FKPP front and tail", limit=600.0)
def ac10(h: float = 0.02, width: float = 0.0):
    """Median front of the mollified equation at T=40 and the tail decay at delta=0.75.

    The default width 0 smears the atom over one grid cell; its eigenvalue
    differs from -c^2/2 by O(h^2) (about 5e-5 at h = 0.02).
    """
    c = 1.0
    lam = S.lambda_single_dirac(c).lam
    speed = math.sqrt(-lam / 2)
    grid = PdeGrid.for_measure(M.dirac(c), 60.0, h, width)
    T = 40.0
    ys = np.linspace(16.0, 21.0, 11)
    fc = front_curve(grid, 0.0, ys, [T])
    y = fc.y_half(T)
    crit = [Criterion("AC10.front", speed, None if y is None else y / T, 0.05, "abs",
                      "sqrt(-lambda/2)", f"y_half(40)/40, mollifier width {width:g}, h {h:g}")]
    td = tail_decay_check(PdeGrid.for_measure(M.dirac(c), 40.0, h, width), 0.0, 0.75,
                          np.arange(4.0, 21.0, 2.0))
    crit.append(Criterion("AC10.tail_slope", -0.20, None if td.fit is None else td.fit.slope,
                          0.0, "le", "1 - u(T, 0, delta T) decays exponentially",
                          "slope of log(1 - u) over T in [4, 20]"))
    return crit, {"y_half": y}


def _ks_band_vs_joint(rng, n=10_000, t=1.0, dt=1e-4, eps=5e-3, c=1.0):
    mu = M.dirac(c)
    kind, fp, locs, wts = mu.kernel_spec()
    steps = int(round(t / dt))
    pos = np.zeros((n, 1))
    A = np.zeros(n)
    for _ in range(steps):
        new = pos + math.sqrt(dt) * rng.standard_normal((n, 1))
        A += K.pcaf_inc_batch(kind, fp, locs, wts, eps, pos, new, dt)
        pos = new
    _, ell = M.sample_bm_localtime_joint(t, rng, n)
    return stats.ks_2samp(A / c, ell).pvalue


@_timed("AC11", "property suites")
def ac11(seed: int = 20255, ks_samples: int = 10_000):
    """Exit monotonicity, Gaussian tails, Lambda invariants, F(p0), band-estimator KS."""
    rng = np.random.default_rng(seed)
    crit = []
    bad = 0
    for _ in range(100):
        d = int(rng.integers(1, 4))
        t = float(rng.uniform(0.05, 5.0))
        R = float(rng.uniform(0.1, 4.0))
        x = rng.normal(size=d) * rng.uniform(0, 3)
        bad += not S.ball_tail_monotonicity(d, t, R, x)
    crit.append(Criterion("AC11.exit_monotonicity", 0.0, float(bad), 0.0, "abs",
                          "P_x(|B_t| >= R) >= P_0(|B_t| >= R)", "violations in 100 draws"))
    for d in (1, 2, 3):
        crit.append(Criterion(f"AC11.gaussian_tail[d={d}]", 1.0, S.gaussian_tail_ratio(10.0, d),
                              0.015, "abs", "exp(-t^2/2) t^(d-2)", "ratio at t=10"))
    worst_cont = worst_zero = 0.0
    sign_ok = True
    worst_F = 0.0
    for lam in (-0.05, -0.5, -1.0, -2.5):
        s = math.sqrt(-2 * lam)
        v = math.sqrt(-lam / 2)
        below = lam + s * s
        worst_cont = max(worst_cont, abs(S.big_lambda(lam, s) - below),
                         abs(S.big_lambda(lam, s) - 0.5 * s * s))
        worst_zero = max(worst_zero, abs(S.big_lambda(lam, v)))
        for delta in np.linspace(0, 2 * s, 41):
            b = S.big_lambda(lam, float(delta))
            if abs(delta - v) > 1e-9 and (b < 0) != (delta < v):
                sign_ok = False
            if 0 < delta < s:
                p0 = S.p_opt(lam, float(delta))
                worst_F = max(worst_F, abs(float(S.split_objective(p0, lam, float(delta))) + b))
    crit.append(Criterion("AC11.Lambda_continuity", 0.0, worst_cont, 1e-12, "abs",
                          "both branches agree at delta = sqrt(-2 lambda)"))
    crit.append(Criterion("AC11.Lambda_zero_at_speed", 0.0, worst_zero, 1e-12, "abs",
                          "Lambda vanishes at sqrt(-lambda/2)"))
    crit.append(Criterion("AC11.Lambda_sign", True, sign_ok, None, "true",
                          "Lambda_delta < 0 iff delta < sqrt(-lambda/2)"))
    crit.append(Criterion("AC11.F_at_p0", 0.0, worst_F, 1e-12, "abs",
                          "F(p0) = -Lambda_delta, p0 = 1 - delta/sqrt(-2 lambda)"))
    p = _ks_band_vs_joint(rng, ks_samples)
    crit.append(Criterion("AC11.band_ks_pvalue", 0.01, p, 0.0, "ge",
                          "band estimator and exact local time share a law",
                          "two-sample KS, dt=1e-4, eps=5e-3"))
    return crit, {"ks_pvalue": p}


@_timed("AC12", "lambda = 0 qualitative suite")
def ac12(replicas: int = 200, seed: int = 20256, horizon: float = 40.0):
    """Shell with cR = 0.3 in d=3: branching stops and L_t/t flattens."""
    mu = M.sphere(0.3, 1.0, 3)
    sp = S.spectral_for(mu)
    st = SimSettings(horizon=horizon, record_every=1.0, dt=2.5e-4, eps=0.05,
                     engine="discretized")
    ens = run_ensemble(st, mu, M.OffspringLaw.binary(), sp, replicas, seed, np.zeros(3))
    ts = ens.t
    fr = nobranch_fractions(ts, ens.stack("events"), (5.0, 10.0, 20.0))
    inc = all(b > a or b == 1.0 for a, b in zip(fr, fr[1:]))
    crit = [Criterion("AC12.lambda_is_zero", 0.0, sp.lam, 0.0, "abs", "cR < (d-2)/2"),
            Criterion("AC12.nobranch_increasing", True, inc, None, "true",
                      "finitely many branch events", f"fractions {np.round(fr, 4).tolist()}")]
    with np.errstate(invalid="ignore", divide="ignore"):
        lt = ens.stack("L") / np.where(ts > 0, ts, np.nan)
    f = fit_slope(ts, lt.mean(axis=0), (horizon / 2, horizon))
    crit.append(Criterion("AC12.L_over_t_slope", 0.0, f.slope, 0.05, "abs", "L_t/t -> 0",
                          f"fit over [{horizon / 2:g}, {horizon:g}]"))
    return crit, {"fractions": fr}


ALL_CHECKS = {"AC1": ac1, "AC2": ac2, "AC3": ac3, "AC4": ac4, "AC5": ac5, "AC6": ac6,
              "AC7": ac7, "AC8": ac8, "AC9": ac9, "AC10": ac10, "AC11": ac11, "AC12": ac12}
FAST_CHECKS = ("AC1", "AC2", "AC3", "AC4")

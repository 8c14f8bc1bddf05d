"""Feynman-Kac expectations E_x[exp(A_t^nu); B_t in E].

Monte Carlo over discretised paths works for every preset.  For a single
atom on the line started at the atom, the joint law of (B_t, l_t) gives a
deterministic two-dimensional quadrature and a closed form for the total
mass.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import log_ndtr, logsumexp

from . import _kernels as K
from .measures import BranchingRateMeasure, bridge_local_time


@dataclass(frozen=True)
class Event:
    """Event on the endpoint B_t: all, norm_ge(r) = {|x| >= r} or dir_ge(r, u) = {<x, u> >= r}."""

    kind: str = "all"
    radius: float = 0.0
    direction: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("all", "norm_ge", "dir_ge"):
            raise ValueError(f"unknown event {self.kind!r}")
        if self.kind == "dir_ge" and self.direction is None:
            raise ValueError("dir_ge needs a direction")

    def indicator(self, pts: np.ndarray) -> np.ndarray:
        if self.kind == "all":
            return np.ones(pts.shape[0], dtype=bool)
        if self.kind == "norm_ge":
            return np.linalg.norm(pts, axis=1) >= self.radius
        return pts @ np.asarray(self.direction, float) >= self.radius

    def describe(self) -> str:
        if self.kind == "all":
            return "all"
        if self.kind == "norm_ge":
            return f"|x|>={self.radius:g}"
        return f"<x,{tuple(self.direction)}>>={self.radius:g}"


ALL = Event()


def norm_ge(r: float) -> Event:
    return Event("norm_ge", float(r))


def dir_ge(direction, r: float) -> Event:
    return Event("dir_ge", float(r), tuple(float(v) for v in direction))


@dataclass(frozen=True)
class FkEstimate:
    value: float
    stderr: float
    method: str
    t: float
    x: tuple
    event: str
    log_value: float = float("nan")

    def __post_init__(self):
        if self.method not in ("mc", "quadrature", "closed_form"):
            raise ValueError(f"unknown method {self.method!r}")
        if not self.value >= 0:
            raise ValueError("FK values are nonnegative")


@dataclass(frozen=True)
class TiltedProbability:
    numerator: FkEstimate
    denominator: FkEstimate
    ratio: float
    log_ratio: float

    def __post_init__(self):
        if not -1e-12 <= self.ratio <= 1 + 1e-9:
            raise ValueError(f"tilted probability {self.ratio} outside [0, 1]")


# ---------------------------------------------------------------------------
# closed form and quadrature (single atom at 0, started there)
# ---------------------------------------------------------------------------

def log_fk_closed_form_dirac1d(c: float, t: float) -> float:
    """log E_0[exp(c l_t)] = log(2 exp(c^2 t/2) Phi(c sqrt t))."""
    return math.log(2.0) + 0.5 * c * c * t + float(log_ndtr(c * math.sqrt(t)))


def fk_closed_form_dirac1d(c: float, t: float) -> FkEstimate:
    lv = log_fk_closed_form_dirac1d(c, t)
    return FkEstimate(math.exp(lv), 0.0, "closed_form", t, (0.0,), "all", lv)


def _scaled_integrand(x, m, c, t):
    # e^{c l} * density at (x, l = m - |x|), times e^{-c^2 t / 2}
    ell = m - x
    return m / math.sqrt(2 * math.pi * t ** 3) * math.exp(c * ell - 0.5 * m * m / t - 0.5 * c * c * t)


def fk_quadrature_dirac1d(c: float, t: float, event: Event = ALL, epsrel: float = 1e-10
                          ) -> FkEstimate:
    """E_0[exp(c l_t); B_t in E] by nested adaptive quadrature.

    Integrates over x = |B_t| >= 0 and m = l + |x| >= x (the two signs of
    B_t contribute equally, except for a directional event), truncated at
    m <= c t + 12 sqrt(t) where the Gaussian factor is below 1e-31 of its
    peak.  The e^{c^2 t/2} factor is carried separately so large t does
    not overflow.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    if not c >= 0:
        raise ValueError("c must be nonnegative")
    mtop = c * t + 12 * math.sqrt(t)
    if event.kind == "all":
        r, weight = 0.0, 2.0
    elif event.kind == "norm_ge":
        r, weight = max(event.radius, 0.0), 2.0
    else:
        u = float(np.asarray(event.direction, float).reshape(-1)[0])
        if u == 0 or abs(abs(u) - 1) > 1e-12:
            raise ValueError("d = 1 direction must be +1 or -1")
        r, weight = event.radius, 1.0
        if r < 0:
            raise ValueError("negative thresholds need the complementary event")
    if r >= mtop:
        return FkEstimate(0.0, 0.0, "quadrature", t, (0.0,), event.describe(), -math.inf)
    peak = c * t            # the integrand in m peaks near c t
    inner = lambda x: integrate.quad(lambda m: _scaled_integrand(x, m, c, t), x, mtop,
                                     points=[p for p in (peak,) if x < p < mtop] or None,
                                     epsabs=0, epsrel=epsrel, limit=200)[0]
    xs = [p for p in (peak,) if r < p < mtop]
    val = integrate.quad(inner, r, mtop, points=xs or None, epsabs=0, epsrel=epsrel,
                         limit=200)[0]
    val *= weight
    lv = (math.log(val) + 0.5 * c * c * t) if val > 0 else -math.inf
    return FkEstimate(math.exp(lv) if lv < 700 else math.inf, 0.0, "quadrature", t, (0.0,),
                      event.describe(), lv)


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

def fk_mc(measure: BranchingRateMeasure, x, t: float, event: Event = ALL, n_paths: int = 10_000,
          dt: float = 1e-3, eps: float = 5e-3, rng: np.random.Generator | None = None,
          mode: str = "band", batch: int = 20_000) -> FkEstimate:
    """Mean of exp(A_t) 1_E(B_t) over simulated paths, with its standard error.

    ``measure`` is nu itself.  mode="band" uses the measures-module
    increments; mode="bridge" (single atoms on the line) adds the exact
    Brownian-bridge local time of every step, so dt only enters through
    the recording grid.  Weights are combined in log space.
    """
    if n_paths < 100:
        raise ValueError("need at least 100 paths")
    rng = np.random.default_rng() if rng is None else rng
    x0 = np.atleast_1d(np.asarray(x, dtype=float))
    d = measure.dimension
    if x0.size != d:
        raise ValueError("start point has the wrong dimension")
    nsteps = max(1, int(round(t / dt)))
    h = t / nsteps
    kind, fp, locs, wts = measure.kernel_spec()
    if mode == "bridge":
        if not (d == 1 and kind == K.KIND_ATOMS_BAND):
            raise ValueError("bridge mode needs atoms on the line")
    elif mode != "band":
        raise ValueError(f"unknown mode {mode!r}")
    logw_all = []
    done = 0
    while done < n_paths:
        m = min(batch, n_paths - done)
        pos = np.tile(x0, (m, 1))
        A = np.zeros(m)
        for _ in range(nsteps):
            new = pos + math.sqrt(h) * rng.standard_normal((m, d))
            if mode == "band":
                A += K.pcaf_inc_batch(kind, fp, locs, wts, eps, pos, new, h)
            else:
                for a, w in zip(locs[:, 0], wts):
                    A += w * bridge_local_time(pos[:, 0] - a, new[:, 0] - a, h,
                                               rng.random(m), rng.random(m))
            pos = new
        ind = event.indicator(pos)
        logw_all.append(np.where(ind, A, -np.inf))
        done += m
    logw = np.concatenate(logw_all)
    n = logw.size
    lmean = float(logsumexp(logw)) - math.log(n)
    if not np.isfinite(lmean):
        return FkEstimate(0.0, 0.0, "mc", t, tuple(x0), event.describe(), -math.inf)
    # second moment relative to the mean
    rel = np.exp(logw - lmean)
    se = float(np.std(rel, ddof=1) / math.sqrt(n)) * math.exp(lmean)
    return FkEstimate(math.exp(lmean), se, "mc", t, tuple(x0), event.describe(), lmean)


# ---------------------------------------------------------------------------
# tilted measure
# ---------------------------------------------------------------------------

def _single_atom_at_origin(measure: BranchingRateMeasure):
    if measure.dimension != 1 or measure.is_density:
        return None
    try:
        locs, w = measure.atoms()
    except TypeError:
        return None
    if len(w) == 1 and locs[0, 0] == 0.0:
        return float(w[0])
    return None


def tilted_prob(measure: BranchingRateMeasure, x, t: float, delta: float,
                rng: np.random.Generator | None = None, **mc) -> TiltedProbability:
    """Q_x^{(t)}(|B_t| >= delta t) where dQ = exp(A_t) dP / E_x exp(A_t)."""
    c = _single_atom_at_origin(measure)
    x0 = np.atleast_1d(np.asarray(x, dtype=float))
    ev = norm_ge(delta * t)
    if c is not None and np.all(x0 == 0):
        den = fk_quadrature_dirac1d(c, t, ALL)
        num = den if delta == 0 else fk_quadrature_dirac1d(c, t, ev)
    else:
        rng = np.random.default_rng() if rng is None else rng
        den = fk_mc(measure, x0, t, ALL, rng=rng, **mc)
        num = den if delta == 0 else fk_mc(measure, x0, t, ev, rng=rng, **mc)
    lr = num.log_value - den.log_value
    return TiltedProbability(num, den, min(1.0, math.exp(lr)), lr)


def fk_value(measure: BranchingRateMeasure, x, t: float, event: Event = ALL,
             rng: np.random.Generator | None = None, **mc) -> FkEstimate:
    """Quadrature when the single-atom oracle applies, otherwise Monte Carlo."""
    c = _single_atom_at_origin(measure)
    x0 = np.atleast_1d(np.asarray(x, dtype=float))
    if t == 0:
        ind = bool(event.indicator(x0.reshape(1, -1))[0])
        return FkEstimate(float(ind), 0.0, "closed_form", 0.0, tuple(x0), event.describe(),
                          0.0 if ind else -math.inf)
    if c is not None and np.all(x0 == 0):
        return fk_quadrature_dirac1d(c, t, event)
    return fk_mc(measure, x0, t, event, rng=rng, **mc)


# ---------------------------------------------------------------------------
# duality
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DualityRow:
    t: float
    event: str
    simulated: float
    simulated_se: float
    fk: float
    fk_se: float
    joint_sigma: float
    passed: bool


def duality_check(ensemble, measure_nu: BranchingRateMeasure, x0, times, events,
                  rng: np.random.Generator | None = None, z: float = 3.0, **mc) -> list[DualityRow]:
    """Compare ensemble means of Z_t(1_E) with E_x[exp(A_t^nu); B_t in E].

    ``ensemble`` is a bbm_sim.EnsembleResult whose settings recorded the
    counts; events are ALL or norm_ge(r) with r matched to a recorded
    delta * t.  Counts are read from the recorded Z and Zd columns.
    """
    rows = []
    ts = ensemble.t
    for t in times:
        i = int(np.argmin(np.abs(ts - t)))
        if abs(ts[i] - t) > 1e-9:
            raise ValueError(f"time {t} was not recorded")
        for ev in events:
            if ev.kind == "all":
                counts = ensemble.stack("Z")[:, i]
            elif ev.kind == "norm_ge":
                deltas = np.asarray(ensemble.replicas[0].deltas, float)
                j = int(np.argmin(np.abs(deltas * t - ev.radius))) if deltas.size else -1
                if j < 0 or abs(deltas[j] * t - ev.radius) > 1e-9:
                    raise ValueError(f"radius {ev.radius} at t={t} was not recorded")
                counts = ensemble.stack("Zd")[:, i, j]
            else:
                raise ValueError("directional duality needs recorded Zdr columns")
            counts = counts[~np.isnan(counts)]
            sim, sim_se = float(counts.mean()), float(counts.std(ddof=1) / math.sqrt(counts.size))
            fk = fk_value(measure_nu, x0, t, ev, rng=rng, **mc)
            joint = math.sqrt(sim_se ** 2 + fk.stderr ** 2)
            ok = abs(sim - fk.value) <= z * joint if joint > 0 else sim == fk.value
            rows.append(DualityRow(float(t), ev.describe(), sim, sim_se, fk.value, fk.stderr,
                                   joint, bool(ok)))
    return rows

"""Branching Brownian motion driven by an additive-functional clock.

Two engines are provided.  The discretised engine moves every particle by
Gaussian steps, accumulates A^mu with the measures-module rules and
branches at the end of the step in which A crosses the particle's Exp(1)
threshold.  For a single atom on the line the exact engine samples the
joint law of (endpoint, local time) over whole record intervals, so it has
no time-step error at all.
"""
from __future__ import annotations

import heapq
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import erfc, erfcinv

from . import _kernels as K
from .measures import Atoms, BranchingRateMeasure, OffspringLaw
from .spectral import SpectralResult

WORKERS_ENV = "BBMSPREAD_WORKERS"


class PopulationCapExceeded(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# population
# ---------------------------------------------------------------------------

@dataclass
class Particle:
    id: int
    parent: int
    position: np.ndarray
    tau: float
    accumulated_A: float


class Population:
    """Structure-of-arrays particle store with spare capacity."""

    def __init__(self, positions, tau, dimension: int):
        positions = np.asarray(positions, dtype=float).reshape(-1, dimension)
        n = positions.shape[0]
        storage = max(16, 2 * n)
        self.d = dimension
        self.pos = np.zeros((storage, dimension))
        self.pos[:n] = positions
        self.A = np.zeros(storage)
        self.tau = np.zeros(storage)
        self.tau[:n] = tau
        self.ids = np.zeros(storage, dtype=np.int64)
        self.ids[:n] = np.arange(n)
        self.parents = np.full(storage, -1, dtype=np.int64)
        self.n = n
        self.next_id = n
        self.t = 0.0
        self.event_count = 0
        self.capped = False

    @property
    def size(self) -> int:
        return self.n

    @property
    def positions(self) -> np.ndarray:
        return self.pos[: self.n]

    def particles(self) -> list[Particle]:
        return [Particle(int(self.ids[i]), int(self.parents[i]), self.pos[i].copy(),
                         float(self.tau[i]), float(self.A[i])) for i in range(self.n)]

    def grow(self, need: int):
        storage = self.pos.shape[0]
        new = max(2 * storage, need)
        for name in ("pos", "A", "tau", "ids", "parents"):
            old = getattr(self, name)
            arr = np.zeros((new,) + old.shape[1:], dtype=old.dtype)
            arr[:storage] = old
            setattr(self, name, arr)


def init_population(x0, rng: np.random.Generator, dimension: int | None = None) -> Population:
    """One particle at x0 with a fresh Exp(1) threshold at time 0."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    d = dimension or x0.size
    return Population(x0.reshape(1, d), rng.exponential(size=1), d)


def _offspring_table(offspring: OffspringLaw):
    vals, cdf = offspring.table()
    return np.ascontiguousarray(vals, dtype=np.int64), np.ascontiguousarray(cdf)


def advance(pop: Population, nsteps: int, dt: float, measure: BranchingRateMeasure,
            offspring: OffspringLaw, eps: float, cap: int) -> Population:
    """Run the compiled stepping loop, growing storage as needed.

    The kernel RNG must have been seeded (see :func:`step` and
    :func:`run_replica`).  Raises PopulationCapExceeded when a branch would
    push the population past ``cap``.
    """
    kind, fp, locs, wts = measure.kernel_spec()
    vals, cdf = _offspring_table(offspring)
    xstep = np.zeros(pop.d)
    remaining = nsteps
    while True:
        st, n, done, ev, nid = K.advance_steps(pop.pos, pop.A, pop.tau, pop.ids, pop.parents,
                                               pop.n, remaining, dt, kind, fp, locs, wts, eps,
                                               vals, cdf, cap, pop.next_id, xstep)
        pop.n, pop.next_id = n, nid
        pop.event_count += ev
        pop.t += done * dt
        remaining -= done
        if st == 0:
            return pop
        if st == 2:
            pop.capped = True
            raise PopulationCapExceeded(f"population cap {cap} exceeded at t={pop.t:.4g}")
        pop.grow(pop.n + int(vals[-1]))


def step(pop: Population, dt: float, measure: BranchingRateMeasure, offspring: OffspringLaw,
         rng: np.random.Generator, eps: float = 5e-3, cap: int = 200_000) -> Population:
    """Advance the population by one time step dt (in place; also returned)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    K.seed_kernel_rng(int(rng.integers(2**31 - 1)))
    return advance(pop, 1, dt, measure, offspring, eps, cap)


def first_branch_times(measure: BranchingRateMeasure, x0, dt: float, n: int,
                       rng: np.random.Generator, eps: float = 5e-3,
                       max_steps: int = 10**7) -> np.ndarray:
    """Times of the first branch event of n independent particles started at x0."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    d = x0.size
    kind, fp, locs, wts = measure.kernel_spec()
    pos = np.tile(x0, (n, 1))
    A = np.zeros(n)
    tau = rng.exponential(size=n)
    out = np.full(n, np.nan)
    alive = np.arange(n)
    sd = math.sqrt(dt)
    for k in range(1, max_steps + 1):
        new = pos[alive] + sd * rng.standard_normal((alive.size, d))
        A[alive] += K.pcaf_inc_batch(kind, fp, locs, wts, eps, pos[alive], new, dt)
        pos[alive] = new
        fired = A[alive] >= tau[alive]
        out[alive[fired]] = k * dt
        alive = alive[~fired]
        if alive.size == 0:
            break
    return out


# ---------------------------------------------------------------------------
# exact engine for one atom on the line
# ---------------------------------------------------------------------------

def _first_passage_given_before(b, u, rng):
    """theta = (b/N)^2 conditioned on theta <= u."""
    v = rng.random(b.size) * erfc(b / np.sqrt(2 * u))
    z = np.sqrt(2.0) * erfcinv(v)
    return np.minimum((b / z) ** 2, u)


def exact_advance(y, rem, u_total, c, offspring: OffspringLaw, rng, cap=None):
    """Advance particles at offsets y from the atom by time u_total.

    ``rem`` is each particle's remaining local time before it branches.
    Returns (new offsets, new rem, number of branch events).
    """
    out_y, out_rem = [], []
    events = 0
    seg_y, seg_rem = np.asarray(y, float), np.asarray(rem, float)
    seg_u = np.full(seg_y.shape, float(u_total))
    total = seg_y.size
    while seg_y.size:
        n = seg_y.size
        z = seg_y + np.sqrt(seg_u) * rng.standard_normal(n)
        same = seg_y * z > 0
        p_hit = np.where(same, np.exp(-2.0 * np.where(same, seg_y * z, 0.0) / seg_u), 1.0)
        hit = rng.random(n) < p_hit
        a = np.abs(seg_y) + np.abs(z)
        ell = np.where(hit, np.sqrt(a * a - 2.0 * seg_u * np.log(rng.random(n))) - a, 0.0)
        br = ell >= seg_rem
        keep = ~br
        out_y.append(z[keep])
        out_rem.append(seg_rem[keep] - ell[keep])
        if not br.any():
            break
        b = np.abs(seg_y[br]) + seg_rem[br]
        left = seg_u[br] - _first_passage_given_before(b, seg_u[br], rng)
        nb = left.size
        events += nb
        kids = (np.full(nb, 2, dtype=np.int64) if offspring.is_binary
                else np.asarray(offspring.sample(rng, nb), dtype=np.int64))
        total += int(kids.sum()) - nb
        if cap is not None and total > cap:
            raise PopulationCapExceeded(f"population cap {cap} exceeded")
        seg_u = np.repeat(left, kids)
        seg_y = np.zeros(seg_u.size)
        seg_rem = rng.exponential(size=seg_u.size) / c
    return np.concatenate(out_y), np.concatenate(out_rem), events


@dataclass
class EventSkeleton:
    """Ordered branch times of the single-atom system (all branches sit at the atom)."""

    times: np.ndarray
    horizon: float
    offspring_counts: np.ndarray | None = None

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("branch times must be strictly increasing")

    def count(self, t) -> np.ndarray:
        """Z_t for binary offspring: 1 + number of branch times <= t."""
        return 1 + np.searchsorted(self.times, np.asarray(t, float), side="right")


def exact_event_skeleton_dirac1d(c: float, x0: float, horizon: float, rng: np.random.Generator,
                                 a: float = 0.0, max_events: int = 10**6) -> EventSkeleton:
    """Branch times of binary BBM with rate c delta_a, without path discretisation.

    A particle born at x branches after the first time its local time at a
    reaches tau/c, which has the law of (|x - a| + tau/c)^2 / N^2.
    """
    if not c > 0:
        raise ValueError("c must be positive")
    heap = [((abs(x0 - a) + rng.exponential() / c) ** 2 / rng.standard_normal() ** 2)]
    times = []
    while heap and heap[0] <= horizon:
        t = heapq.heappop(heap)
        times.append(t)
        if len(times) > max_events:
            raise PopulationCapExceeded(f"more than {max_events} events before {horizon}")
        for _ in range(2):
            heapq.heappush(heap, t + (rng.exponential() / c) ** 2 / rng.standard_normal() ** 2)
    return EventSkeleton(np.array(times), horizon)


# ---------------------------------------------------------------------------
# recording
# ---------------------------------------------------------------------------

@dataclass
class SimSettings:
    """Numerical settings of one replica."""

    horizon: float = 14.0
    record_every: float = 0.5
    dt: float = 1e-3
    eps: float = 5e-3
    population_cap: int = 200_000
    deltas: tuple = ()
    directions: tuple = ()
    engine: str = "auto"          # auto | exact | discretized
    record_from: float = 0.0

    def record_times(self) -> np.ndarray:
        k = int(round(self.horizon / self.record_every))
        if abs(k * self.record_every - self.horizon) > 1e-9 * max(1.0, self.horizon):
            raise ValueError("horizon must be a multiple of record_every")
        ts = np.round(np.arange(0, k + 1) * self.record_every, 12)
        return ts[(ts == 0) | (ts >= self.record_from - 1e-12)]


@dataclass
class TrajectoryStats:
    """Spread statistics of one replica at the record times.

    Arrays are indexed [time], [time, direction], [time, delta] or
    [time, direction, delta].  Rows after a cap termination are NaN.
    """

    t: np.ndarray
    Z: np.ndarray
    L: np.ndarray
    R: np.ndarray
    Lr: np.ndarray
    argmax: np.ndarray
    Zd: np.ndarray
    Zdr: np.ndarray
    M: np.ndarray
    events: np.ndarray
    capped: bool = False
    deltas: tuple = ()
    directions: tuple = ()


def _empty_stats(ts, d, ndir, ndel, deltas, directions):
    m = ts.size
    nan = np.nan
    return TrajectoryStats(ts.copy(), np.full(m, nan), np.full(m, nan), np.full(m, nan),
                           np.full((m, ndir), nan), np.full((m, ndir, d), nan),
                           np.full((m, ndel), nan), np.full((m, ndir, ndel), nan),
                           np.full(m, nan), np.full(m, nan), False, tuple(deltas),
                           tuple(map(tuple, directions)))


def _record(stats: TrajectoryStats, i: int, pos: np.ndarray, t: float, events: int,
            dirs: np.ndarray, deltas: np.ndarray, spectral: SpectralResult | None):
    d = pos.shape[1]
    stats.Z[i] = pos.shape[0]
    norms = np.abs(pos[:, 0]) if d == 1 else np.linalg.norm(pos, axis=1)
    stats.L[i] = norms.max()
    if d == 1:
        stats.R[i] = pos[:, 0].max()
    thr = deltas * t
    if deltas.size:
        srt = np.sort(norms)
        stats.Zd[i] = norms.size - np.searchsorted(srt, thr, side="left")
    for j, r in enumerate(dirs):
        proj = pos @ r
        k = int(np.argmax(proj))
        stats.Lr[i, j] = proj[k]
        stats.argmax[i, j] = pos[k]
        if deltas.size:
            ps = np.sort(proj)
            stats.Zdr[i, j] = proj.size - np.searchsorted(ps, thr, side="left")
    if spectral is not None and spectral.eigenfunction is not None:
        h = spectral.eigenfunction(pos if d > 1 else pos[:, 0])
        stats.M[i] = math.exp(spectral.lam * t) * float(np.sum(h))
    stats.events[i] = events


def _single_atom(measure: BranchingRateMeasure):
    k = measure.kind
    if measure.dimension == 1 and isinstance(k, Atoms) and len(k.weights) == 1:
        return float(k.locations[0]), float(k.weights[0])
    return None


def resolve_engine(settings: SimSettings, measure: BranchingRateMeasure) -> str:
    if settings.engine == "auto":
        return "exact" if _single_atom(measure) else "discretized"
    if settings.engine == "exact" and _single_atom(measure) is None:
        raise ValueError("exact engine needs a single atom on the line")
    if settings.engine not in ("exact", "discretized"):
        raise ValueError(f"unknown engine {settings.engine!r}")
    return settings.engine


def run_replica(settings: SimSettings, measure: BranchingRateMeasure, offspring: OffspringLaw,
                spectral: SpectralResult | None, rng: np.random.Generator, x0=None
                ) -> TrajectoryStats:
    """Simulate one replica and record statistics at every record time.

    A replica whose population would exceed the cap stops; its remaining
    rows stay NaN and ``capped`` is set.
    """
    d = measure.dimension
    x0 = np.zeros(d) if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))
    ts = settings.record_times()
    dirs = np.asarray(settings.directions, dtype=float).reshape(-1, d)
    deltas = np.asarray(settings.deltas, dtype=float).reshape(-1)
    stats = _empty_stats(ts, d, len(dirs), deltas.size, deltas, dirs)
    spec = spectral if spectral is not None and spectral.lam < 0 else None
    engine = resolve_engine(settings, measure)
    try:
        if engine == "exact":
            a, c = _single_atom(measure)
            y = x0 - a
            rem = rng.exponential(size=1) / c
            events, t_prev = 0, 0.0
            for i, t in enumerate(ts):
                if t > t_prev:
                    y, rem, ev = exact_advance(y, rem, t - t_prev, c, offspring, rng,
                                               settings.population_cap)
                    events += ev
                    t_prev = t
                _record(stats, i, (y + a).reshape(-1, 1), t, events, dirs, deltas, spec)
        else:
            K.seed_kernel_rng(int(rng.integers(2**31 - 1)))
            pop = init_population(x0, rng, d)
            for i, t in enumerate(ts):
                nsteps = int(round((t - pop.t) / settings.dt))
                if nsteps > 0:
                    advance(pop, nsteps, settings.dt, measure, offspring, settings.eps,
                            settings.population_cap)
                pop.t = t
                _record(stats, i, pop.positions, t, pop.event_count, dirs, deltas, spec)
    except PopulationCapExceeded:
        stats.capped = True
    return stats


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------

@dataclass
class EnsembleResult:
    replicas: list
    seed: int
    capped: int = 0
    aggregate: dict = field(default_factory=dict)

    def stack(self, name: str) -> np.ndarray:
        return np.stack([getattr(r, name) for r in self.replicas])

    @property
    def t(self) -> np.ndarray:
        return self.replicas[0].t


def _aggregate(reps) -> dict:
    out = {}
    for name in ("Z", "L", "R", "M", "events"):
        a = np.stack([getattr(r, name) for r in reps])
        n = np.sum(~np.isnan(a), axis=0)
        with np.errstate(invalid="ignore", divide="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            mean = np.nanmean(a, axis=0) if np.any(n) else np.full(a.shape[1], np.nan)
            sd = np.nanstd(a, axis=0, ddof=1) if a.shape[0] > 1 else np.zeros(a.shape[1])
        out[name] = {"mean": mean, "se": sd / np.sqrt(np.maximum(n, 1)), "n": n}
    return out


def _replica_job(args):
    idx, seq, settings, measure, offspring, spectral, x0 = args
    return idx, run_replica(settings, measure, offspring, spectral,
                            np.random.default_rng(seq), x0)


def run_ensemble(settings: SimSettings, measure: BranchingRateMeasure, offspring: OffspringLaw,
                 spectral: SpectralResult | None, replicas: int, seed: int, x0=None,
                 order=None, workers: int | None = None) -> EnsembleResult:
    """Independent replicas with streams spawned from one master seed.

    Replica i always uses the i-th spawned stream and results are stored
    by index, so the output does not depend on ``order`` or on the number
    of worker processes (read from BBMSPREAD_WORKERS when not given).
    """
    if replicas < 1:
        raise ValueError("need at least one replica")
    seqs = np.random.SeedSequence(seed).spawn(replicas)
    order = range(replicas) if order is None else order
    if sorted(order) != list(range(replicas)):
        raise ValueError("order must be a permutation of the replica indices")
    workers = workers or int(os.environ.get(WORKERS_ENV, "1"))
    jobs = [(i, seqs[i], settings, measure, offspring, spectral, x0) for i in order]
    results: list = [None] * replicas
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            for i, st in ex.map(_replica_job, jobs, chunksize=max(1, replicas // (4 * workers))):
                results[i] = st
    else:
        for job in jobs:
            i, st = _replica_job(job)
            results[i] = st
    capped = sum(r.capped for r in results)
    return EnsembleResult(results, seed, capped, _aggregate(results))


# ---------------------------------------------------------------------------
# rates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    slope: float
    stderr: float
    window: tuple
    theory: float | None = None
    intercept: float = 0.0

    def within(self, tol: float) -> bool:
        return self.theory is not None and abs(self.slope - self.theory) <= tol


def fit_slope(t, y, window=None, theory=None) -> RateFit:
    """Least-squares slope of y against t (no logarithm)."""
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    if window is not None:
        sel = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
        t, y = t[sel], y[sel]
    else:
        window = (float(t[0]), float(t[-1]))
    if t.size < 2:
        raise ValueError("need at least two points in the window")
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite values in the window")
    if t.size == 2:
        slope = (y[1] - y[0]) / (t[1] - t[0])
        return RateFit(float(slope), 0.0, tuple(window), theory, float(y[0] - slope * t[0]))
    res = stats.linregress(t, y)
    return RateFit(float(res.slope), float(res.stderr), tuple(window), theory,
                   float(res.intercept))


def estimate_rate(t, values, window=None, theory=None) -> RateFit:
    """Slope of log(values) against t over the window."""
    t = np.asarray(t, float)
    v = np.asarray(values, float)
    if window is not None:
        sel = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
        t, v = t[sel], v[sel]
    if np.any(~(v > 0)):
        raise ValueError("series must be strictly positive on the window")
    return fit_slope(t, np.log(v), window, theory)

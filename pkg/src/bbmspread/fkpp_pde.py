"""FKPP-type equation u_t = (1/2) u'' + V (G(u) - u) on the line.

Here G is the offspring generating function and V a smooth density
approximating the branching-rate measure.  With initial data 1{|x| <= y}
the solution is u(T, x, y) = P_x(L_T <= y); with 1{x <= y} it is
P_x(R_T <= y).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dst, idst

from .measures import BallIndicator, BranchingRateMeasure, MollifiedAtoms, OffspringLaw
from .bbm_sim import fit_slope

MAX_PRINCIPLE_TOL = 1e-12


class MaximumPrincipleError(RuntimeError):
    pass


def mollified_potential(nodes: np.ndarray, locations, weights, width: float = 0.0,
                        tol: float = 1e-6) -> np.ndarray:
    """Atoms smeared into a potential whose grid integral h * sum(V) is the target mass.

    width > 0: Gaussian bumps of that standard deviation.  width = 0: each
    atom is split linearly between its two neighbouring nodes (a hat of
    width h), the point-mass discretisation also used by the spectral grid.
    """
    if width < 0:
        raise ValueError("width must be nonnegative")
    h = nodes[1] - nodes[0]
    V = np.zeros_like(nodes)
    for a, w in zip(np.atleast_1d(locations), np.atleast_1d(weights)):
        if width == 0:
            f = (a - nodes[0]) / h
            i = int(np.floor(f))
            if not 0 <= i < nodes.size - 1:
                raise ValueError(f"atom at {a} lies outside the grid")
            frac = f - i
            V[i] += w * (1 - frac) / h
            V[i + 1] += w * frac / h
            continue
        bump = np.exp(-0.5 * ((nodes - a) / width) ** 2)
        V += w * bump / (h * bump.sum())
    target = float(np.sum(weights))
    if abs(h * V.sum() - target) > tol * max(target, 1.0):
        raise ValueError("mollified potential mass mismatch")
    return V


def ball_potential(nodes: np.ndarray, c: float, R: float) -> np.ndarray:
    """c 1{|x| <= R} with partial cells weighted by the covered fraction."""
    h = nodes[1] - nodes[0]
    frac = np.clip((R - (np.abs(nodes) - h / 2)) / h, 0.0, 1.0)
    return c * frac


@dataclass
class PdeGrid:
    """Uniform grid on [-X, X] with n nodes (boundary nodes included)."""

    X: float
    n: int
    dt: float
    V: np.ndarray = field(repr=False)
    mass: float | None = None

    def __post_init__(self):
        self.V = np.asarray(self.V, dtype=float)
        if self.V.shape != (self.n,):
            raise ValueError("V must have one value per node")
        if np.any(self.V < 0):
            raise ValueError("V must be nonnegative")
        if self.dt * self.V.max(initial=0.0) > 0.1 + 1e-12:
            raise ValueError(f"dt * max V = {self.dt * self.V.max():.3g} exceeds 0.1")
        if self.mass is not None and abs(self.h * self.V.sum() - self.mass) > 1e-6 * max(1, self.mass):
            raise ValueError("potential mass mismatch")

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(-self.X, self.X, self.n)

    @property
    def h(self) -> float:
        return 2 * self.X / (self.n - 1)

    @classmethod
    def for_measure(cls, measure: BranchingRateMeasure | None, X: float, h: float,
                    width: float = 0.0, dt: float | None = None, dt_max: float = 0.02
                    ) -> "PdeGrid":
        """Grid with spacing about h, mollified (or ball) potential and dt from the reaction bound.

        Atoms are smeared with Gaussians of the given width, or onto the
        grid scale when width = 0 (see :func:`mollified_potential`).  A
        measure that is already mollified keeps its own width.
        """
        n = int(round(2 * X / h)) + 1
        nodes = np.linspace(-X, X, n)
        mass = None
        if measure is None:
            V = np.zeros(n)
        elif isinstance(measure.kind, BallIndicator):
            V = ball_potential(nodes, measure.kind.coupling, measure.kind.radius)
        else:
            if measure.dimension != 1:
                raise ValueError("the PDE solver is one-dimensional")
            locs, w = measure.atoms()
            if isinstance(measure.kind, MollifiedAtoms):
                width = measure.kind.width
            V = mollified_potential(nodes, locs[:, 0], w, width)
            mass = float(w.sum())
        vmax = V.max(initial=0.0)
        if dt is None:
            # 1/k with k integer keeps integer record times on the step grid
            dt = 1.0 / math.ceil(max(1.0 / dt_max, 10.0 * vmax))
        return cls(X, n, dt, V, mass)


def _initial(nodes, h, y, version):
    """Cell averages of the indicator initial data, so the step sits exactly at y."""
    lo, hi = nodes - h / 2, nodes + h / 2
    if version == "R":
        return np.clip((y - lo) / h, 0.0, 1.0)
    return np.clip((np.minimum(hi, y) - np.maximum(lo, -y)) / h, 0.0, 1.0)


def _reaction(u, V, dt, offspring: OffspringLaw):
    if offspring.is_binary:
        return u + dt * V[:, None] * (u * u - u)
    return u + dt * V[:, None] * (offspring.generating_function(u) - u)


def solve_fkpp_1d(grid: PdeGrid, ys, times, offspring: OffspringLaw | None = None,
                  version: str = "L", check: bool = True) -> np.ndarray:
    """u(T, x, y) on the grid for every y in ys and T in times.

    Strang splitting: half-step diffusion, explicit reaction step, half-step
    diffusion.  Each diffusion half-step applies exp(tau (1/2) D2) exactly
    through the type-I sine transform, which keeps u inside [0, 1] for any
    dt.  Boundary values: 0 at both ends for the L version; 1 on the left
    and 0 on the right for the R version (the linear interpolant between
    them is subtracted so the transform sees homogeneous data).

    Round-off excursions outside [0, 1] of at most 1e-12 are clipped; larger
    ones raise MaximumPrincipleError.  Returns an array of shape
    (len(times), len(ys), n).
    """
    if version not in ("L", "R"):
        raise ValueError("version must be 'L' or 'R'")
    offspring = offspring or OffspringLaw.binary()
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(np.diff(times) < 0) or np.any(times < 0):
        raise ValueError("times must be nonnegative and sorted")
    nodes, h, dt = grid.nodes, grid.h, grid.dt
    m = grid.n - 2
    # harmonic part carrying the boundary values
    base = (grid.X - nodes) / (2 * grid.X) if version == "R" else np.zeros_like(nodes)
    u = np.stack([_initial(nodes, h, y, version) for y in ys], axis=1)   # (n, ny)
    u[0], u[-1] = base[0], 0.0
    V = grid.V
    k = np.arange(1, m + 1)
    decay = np.exp(-(dt / 2) * (2 / h ** 2) * np.sin(np.pi * k / (2 * (m + 1))) ** 2)[:, None]
    base_col = base[:, None]

    def diffuse(u):
        v = u[1:-1] - base_col[1:-1]
        out = np.empty_like(u)
        out[1:-1] = idst(decay * dst(v, type=1, axis=0), type=1, axis=0) + base_col[1:-1]
        out[0], out[-1] = base[0], 0.0
        return out

    def enforce(u, t):
        lo, hi = u.min(), u.max()
        if check and (lo < -MAX_PRINCIPLE_TOL or hi > 1 + MAX_PRINCIPLE_TOL):
            raise MaximumPrincipleError(f"u in [{lo:.3e}, {hi:.3e}] at t={t:g}")
        if lo < 0 or hi > 1:
            np.clip(u, 0.0, 1.0, out=u)
        return u

    out = np.empty((times.size, ys.size, grid.n))
    t = 0.0
    for i, T in enumerate(times):
        nsteps = int(round((T - t) / dt))
        if abs(nsteps * dt - (T - t)) > 1e-9 * max(1.0, T):
            raise ValueError(f"record time {T} is not on the dt grid")
        for _ in range(nsteps):
            u = diffuse(u)
            u = _reaction(u, V, dt, offspring)
            u = enforce(diffuse(u), t + dt)
            t += dt
        t = T
        out[i] = u.T
    return out


@dataclass
class FrontCurve:
    """Median front y_half(T) with u(T, x0, y_half) = 1/2 (None before it exists)."""

    rows: list
    ys: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)

    def y_half(self, T: float):
        for t, y in self.rows:
            if abs(t - T) < 1e-9:
                return y
        raise KeyError(T)


def _crossing(ys, col, level=0.5):
    if not (col.min() < level <= col.max()):
        return None
    j = int(np.argmax(col >= level))
    if j == 0:
        return float(ys[0])
    y0, y1, c0, c1 = ys[j - 1], ys[j], col[j - 1], col[j]
    return float(y0 + (level - c0) * (y1 - y0) / (c1 - c0))


def front_curve(grid: PdeGrid, x0: float, ys, Ts, offspring: OffspringLaw | None = None,
                version: str = "L") -> FrontCurve:
    """y_half(T) from one multi-y solve; u(T, x0, .) must be nondecreasing in y."""
    ys = np.sort(np.asarray(ys, dtype=float))
    Ts = np.asarray(Ts, dtype=float)
    u = solve_fkpp_1d(grid, ys, Ts, offspring, version)
    i0 = int(np.argmin(np.abs(grid.nodes - x0)))
    col = u[:, :, i0]
    if np.any(np.diff(col, axis=1) < -1e-10):
        raise RuntimeError("u(T, x0, y) is not monotone in y")
    rows = [(float(T), _crossing(ys, col[k])) for k, T in enumerate(Ts)]
    return FrontCurve(rows, ys, col)


@dataclass
class TailDecay:
    Ts: np.ndarray
    tail: np.ndarray
    fit: object | None
    truncated: bool


def tail_decay_check(grid: PdeGrid, x0: float, delta: float, Ts,
                     offspring: OffspringLaw | None = None, floor: float = 1e-14) -> TailDecay:
    """Fit the exponential rate of 1 - u(T, x0, delta T) over the T grid.

    Points where the tail is below ``floor`` are dropped from the window;
    ``fit`` is None when fewer than two points remain.
    """
    Ts = np.asarray(Ts, dtype=float)
    ys = delta * Ts
    u = solve_fkpp_1d(grid, ys, Ts, offspring, "L")
    i0 = int(np.argmin(np.abs(grid.nodes - x0)))
    tail = np.array([1.0 - u[k, k, i0] for k in range(Ts.size)])
    keep = tail > floor
    fit = fit_slope(Ts[keep], np.log(tail[keep])) if keep.sum() >= 2 else None
    return TailDecay(Ts, tail, fit, bool((~keep).any()))

"""Principal eigenvalues of -(1/2) Laplacian - nu and related rate functions.

All eigenvalue routines take the measure nu = (Q - 1) mu directly; use
:func:`spectral_for` to go from a branching-rate measure and offspring law
to the matching solver.  Root finding is done in s = sqrt(-2 lambda).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, optimize, special
from scipy.linalg import eigh, eigh_tridiagonal
from scipy.stats import ncx2, norm

from .measures import (Atoms, BallIndicator, BranchingRateMeasure, ExpDecay, LatticeAtoms,
                       MollifiedAtoms, OffspringLaw, PowerLawCompact, SphereSurface)

METHODS = ("closed_form", "transcendental", "atomic_perron", "grid_1d", "grid_radial")
CLAMP = 1e-10
S_TOL = 1e-13


class NoRootError(RuntimeError):
    """The Perron root of K(lambda) never reaches 1."""


class SingularKernelError(ValueError):
    """Atomic solver asked for d >= 2, where the resolvent blows up on the diagonal."""


def _sphere_area(d: int) -> float:
    return 2 * math.pi ** (d / 2) / math.gamma(d / 2)


# ---------------------------------------------------------------------------
# eigenfunctions
# ---------------------------------------------------------------------------

class EigenfunctionHandle:
    """L2-normalised positive ground state h.

    ``representation`` is one of closed_form_single_dirac, atomic, grid or
    radial.  Calling the handle evaluates h at points of shape (n, d), or
    at a 1-d array of abscissae when d = 1.
    """

    def __init__(self, representation: str, dimension: int, fn: Callable, integral: float,
                 data: dict):
        self.representation = representation
        self.dimension = dimension
        self._fn = fn
        self.integral = float(integral)
        self.data = data

    def _points(self, x):
        x = np.asarray(x, dtype=float)
        if self.dimension == 1:
            return x.reshape(-1) if x.ndim <= 1 else x[..., 0].reshape(-1)
        return np.atleast_2d(x)

    def __call__(self, x):
        scalar = np.ndim(x) == 0 or (self.dimension > 1 and np.ndim(x) == 1)
        out = self._fn(self._points(x))
        return float(out[0]) if scalar else out

    def c_h(self, x):
        """h(x) * integral of h."""
        return self(x) * self.integral

    def l2_norm_sq(self) -> float:
        """Numerical check of the normalisation."""
        return float(self.data.get("l2", float("nan")))

    def __repr__(self):
        return f"EigenfunctionHandle({self.representation}, d={self.dimension})"


def _radial_handle(profile: Callable, d: int, breaks, representation="radial", data=None):
    """Normalise a radial profile u(r) and wrap it as a handle."""
    area = _sphere_area(d)
    pts = [0.0, *breaks]

    def piecewise(f):
        total = 0.0
        for a, b in zip(pts, pts[1:]):
            total += integrate.quad(f, a, b, epsabs=0, epsrel=1e-12, limit=200)[0]
        total += integrate.quad(f, pts[-1], np.inf, epsabs=0, epsrel=1e-12, limit=200)[0]
        return total

    n2 = area * piecewise(lambda r: r ** (d - 1) * profile(r) ** 2)
    scale = 1.0 / math.sqrt(n2)
    integral = scale * area * piecewise(lambda r: r ** (d - 1) * profile(r))
    vec = np.vectorize(profile, otypes=[float])

    def fn(p):
        r = np.abs(p) if p.ndim == 1 else np.linalg.norm(p, axis=1)
        return scale * vec(r)

    info = dict(data or {})
    info["l2"] = scale ** 2 * n2
    return EigenfunctionHandle(representation, d, fn, integral, info)


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectralResult:
    """Principal eigenvalue with provenance.

    ``lam`` is clamped to 0 when there is no bound state, in which case the
    eigenfunction is absent.  ``extra`` carries solver diagnostics such as
    residuals or alternative roots.
    """

    lam: float
    method: str
    eigenfunction: EigenfunctionHandle | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.lam > 0:
            raise ValueError("lambda must be <= 0")
        if self.eigenfunction is not None and not self.lam < 0:
            raise ValueError("an eigenfunction requires lambda < 0")

    @property
    def bound_state(self) -> bool:
        return self.lam < 0

    @property
    def s(self) -> float:
        """sqrt(-2 lambda), the decay rate of h."""
        return math.sqrt(-2.0 * self.lam)

    @property
    def speed(self) -> float:
        return math.sqrt(-self.lam / 2.0)

    def big_lambda(self, delta: float) -> float:
        return big_lambda(self.lam, delta)


# ---------------------------------------------------------------------------
# closed forms and transcendental equations
# ---------------------------------------------------------------------------

def lambda_single_dirac(c: float, a: float = 0.0) -> SpectralResult:
    """c delta_a on the line: lambda = -c^2/2, h = sqrt(c) exp(-c|x - a|)."""
    if not c > 0:
        raise ValueError("c must be positive")
    sc = math.sqrt(c)

    def fn(x):
        return sc * np.exp(-c * np.abs(x - a))

    h = EigenfunctionHandle("closed_form_single_dirac", 1, fn, 2.0 / sc,
                            {"c": c, "a": a, "l2": 1.0})
    return SpectralResult(-0.5 * c * c, "closed_form", h)


def two_dirac_residual(s, c1, c2, a):
    """(c1 - s)(c2 - s) - c1 c2 exp(-4 a s)."""
    return (c1 - s) * (c2 - s) - c1 * c2 * np.exp(-4.0 * a * s)


def lambda_two_diracs(c1: float, c2: float, a: float) -> SpectralResult:
    """c1 delta_{-a} + c2 delta_a with 0 < c1 <= c2, a > 0.

    Solves (c1 - s)(c2 - s) = c1 c2 exp(-4 a s) for s in (c2, c1 + c2].
    """
    if not (c1 > 0 and c2 > 0 and a > 0):
        raise ValueError("c1, c2, a must be positive")
    if c1 > c2:
        raise ValueError("expected c1 <= c2")
    lo, hi = c2, c1 + c2
    flo, fhi = two_dirac_residual(lo, c1, c2, a), two_dirac_residual(hi, c1, c2, a)
    if not (flo < 0 < fhi or fhi == 0):
        raise NoRootError(f"bracket failure on ({lo}, {hi}]: f = {flo:.3e}, {fhi:.3e}")
    s = hi if fhi == 0 else optimize.brentq(two_dirac_residual, lo, hi, args=(c1, c2, a),
                                            xtol=S_TOL, rtol=4 * np.finfo(float).eps)
    h = _atomic_eigenfunction(np.array([-a, a]), np.array([c1, c2]), s)
    return SpectralResult(-0.5 * s * s, "transcendental", h,
                          {"s": s, "residual": float(two_dirac_residual(s, c1, c2, a))})


def shell_matching_lhs(s, R):
    """s e^{sR} / sinh(sR) = s (1 + coth(sR)), with its s -> 0 limit 1/R."""
    s = np.asarray(s, dtype=float)
    x = s * R
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(x > 1e-8, 2.0 * s / (-np.expm1(-2.0 * x)), 1.0 / R + s)
    return val


def _shell_root(target, R):
    if not target * R > 1.0:
        return None
    f = lambda s: float(shell_matching_lhs(s, R)) - target
    # lhs > 2s, so the root is below target / 2
    return optimize.brentq(f, 1e-300, target / 2.0, xtol=S_TOL, rtol=4 * np.finfo(float).eps)


def lambda_delta_shell_d3(c: float, R: float) -> SpectralResult:
    """c times surface measure of the sphere of radius R in R^3.

    Bound state iff cR > 1/2, from s (1 + coth(sR)) = 2c.  The root of the
    same left side set equal to c is stored as ``extra['printed_lambda']``
    (None when that equation has no positive root).
    """
    if not (c > 0 and R > 0):
        raise ValueError("c and R must be positive")
    s = _shell_root(2.0 * c, R)
    s_alt = _shell_root(c, R)
    extra = {"threshold_cR": 0.5, "s": s,
             "printed_lambda": None if s_alt is None else -0.5 * s_alt * s_alt}
    if s is None:
        return SpectralResult(0.0, "transcendental", None, extra)

    def profile(r, s=s):
        if r < R:
            return math.sinh(s * r) / r if r > 0 else s
        return math.sinh(s * R) * math.exp(-s * (r - R)) / r

    h = _radial_handle(profile, 3, [R], data={"s": s, "R": R})
    return SpectralResult(-0.5 * s * s, "transcendental", h, extra)


def ball_critical_coupling(R: float, d: int = 3) -> float:
    """Smallest coupling with a bound state: pi^2/(8 R^2) in d = 3, 0 in d <= 2."""
    return math.pi ** 2 / (8 * R * R) if d == 3 else 0.0


def _ball_d3_root(c, R, rhs_scale):
    # k cot(kR) = -s / rhs_scale with k^2 + s^2 = 2c; ground state has kR in (pi/2, pi)
    kmax = min(math.sqrt(2 * c), math.pi / R)
    klo = math.pi / (2 * R)
    if not kmax > klo:
        return None

    def g(k):
        s = math.sqrt(max(2 * c - k * k, 0.0))
        return k / math.tan(k * R) + s / rhs_scale

    hi = kmax * (1 - 1e-15) if kmax == math.sqrt(2 * c) else kmax * (1 - 1e-14)
    if g(hi) > 0:
        return None
    k = optimize.brentq(g, klo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return k * k / 2 - c


def lambda_ball_d3(c: float, R: float) -> SpectralResult:
    """c 1_{|x| <= R} in R^3.

    Bound state iff c > pi^2/(8 R^2); lambda in (c* - c, 0) solves
    k cot(kR) = -s with k = sqrt(2(lambda + c)).  The root of
    tan(kR)/(kR) = -1/s is stored as ``extra['printed_lambda']``.
    """
    if not (c > 0 and R > 0):
        raise ValueError("c and R must be positive")
    cstar = ball_critical_coupling(R, 3)
    lam = _ball_d3_root(c, R, 1.0)
    lam_alt = _ball_d3_root(c, R, R)
    extra = {"c_star": cstar, "bracket": (cstar - c, min(0.0, 4 * cstar - c)),
             "printed_lambda": lam_alt}
    if lam is None or c <= cstar:
        return SpectralResult(0.0, "transcendental", None, extra)
    k, s = math.sqrt(2 * (lam + c)), math.sqrt(-2 * lam)

    def profile(r):
        if r < R:
            return math.sin(k * r) / r if r > 0 else k
        return math.sin(k * R) * math.exp(-s * (r - R)) / r

    h = _radial_handle(profile, 3, [R], data={"k": k, "s": s, "R": R})
    return SpectralResult(lam, "transcendental", h, extra)


def lambda_ball_d2(c: float, R: float) -> SpectralResult:
    """c 1_{|x| <= R} in R^2 (always a bound state).

    Matches J0(k r) inside to K0(s r) outside: k J1(kR)/J0(kR) = s K1(sR)/K0(sR).
    """
    if not (c > 0 and R > 0):
        raise ValueError("c and R must be positive")
    j01 = special.jn_zeros(0, 1)[0]

    def f(k):
        s = math.sqrt(max(2 * c - k * k, 0.0))
        left = k * special.j1(k * R) / special.j0(k * R)
        right = s * special.k1e(s * R) / special.k0e(s * R) if s > 0 else 0.0
        return left - right

    hi = min(math.sqrt(2 * c) * (1 - 1e-15), j01 / R * (1 - 1e-12))
    if f(hi) * f(1e-12 * hi) > 0:
        # lambda ~ -exp(-2 / (c R^2)) falls below double resolution of k^2/2 - c
        raise NoRootError(f"bound state of the d=2 ball with c={c:g} is not resolvable")
    k = optimize.brentq(f, 1e-12 * hi, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    lam = k * k / 2 - c
    s = math.sqrt(-2 * lam)
    j0R, k0R = special.j0(k * R), special.k0(s * R)

    def profile(r):
        if r < R:
            return special.j0(k * r) / j0R
        return special.k0(s * r) / k0R

    h = _radial_handle(profile, 2, [R], data={"k": k, "s": s, "R": R})
    return SpectralResult(lam, "transcendental", h, {"k": k, "s": s})


def lambda_ball_d1(c: float, R: float) -> SpectralResult:
    """c 1_{|x| <= R} on the line: k tan(kR) = s, kR in (0, pi/2)."""
    if not (c > 0 and R > 0):
        raise ValueError("c and R must be positive")
    hi = min(math.sqrt(2 * c) * (1 - 1e-15), math.pi / (2 * R) * (1 - 1e-14))

    def f(k):
        return k * math.tan(k * R) - math.sqrt(max(2 * c - k * k, 0.0))

    k = optimize.brentq(f, 1e-300, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    lam = k * k / 2 - c
    s = math.sqrt(-2 * lam)

    def profile(r):
        return math.cos(k * r) if r < R else math.cos(k * R) * math.exp(-s * (r - R))

    # the radial helper with d = 1 integrates over both half-lines
    h = _radial_handle(profile, 1, [R], data={"k": k, "s": s, "R": R})
    return SpectralResult(lam, "transcendental", h, {"k": k, "s": s})


def lambda_circle_d2(c: float, R: float) -> SpectralResult:
    """c times arc length on the circle of radius R in R^2: 2 c R I0(sR) K0(sR) = 1."""
    if not (c > 0 and R > 0):
        raise ValueError("c and R must be positive")

    def f(s):
        x = s * R
        return 2 * c * R * special.i0e(x) * special.k0e(x) - 1.0

    hi = 1.0
    while f(hi) > 0:
        hi *= 2
    s = optimize.brentq(f, 1e-300, hi, xtol=S_TOL, rtol=4 * np.finfo(float).eps)
    i0R, k0R = special.i0(s * R), special.k0(s * R)

    def profile(r):
        return special.i0(s * r) / i0R if r < R else special.k0(s * r) / k0R

    h = _radial_handle(profile, 2, [R], data={"s": s, "R": R})
    return SpectralResult(-0.5 * s * s, "transcendental", h, {"s": s})


# ---------------------------------------------------------------------------
# atomic Perron solver
# ---------------------------------------------------------------------------

def _perron(locs, w, s):
    """Largest eigenvalue and eigenvector of W^{1/2} G W^{1/2}, G = e^{-s|xi-xj|}/s."""
    D = np.abs(locs[:, None] - locs[None, :])
    sw = np.sqrt(w)
    S = sw[:, None] * np.exp(-s * D) / s * sw[None, :]
    vals, vecs = eigh(S, subset_by_index=[len(w) - 1, len(w) - 1])
    v = vecs[:, 0]
    v = v if v.sum() >= 0 else -v
    return vals[0], v


def _atomic_eigenfunction(locs, w, s):
    """h(x) = sum_j a_j exp(-s|x - x_j|), a_j = w_j h(x_j)/s, L2-normalised."""
    rho, v = _perron(locs, w, s)
    D = np.abs(locs[:, None] - locs[None, :])
    # v = W^{1/2} h, so h = G W^{1/2} v / rho; avoids dividing by tiny weights
    hv = (np.exp(-s * D) / s) @ (np.sqrt(w) * v) / rho
    amp = w * hv / s
    n2 = float(amp @ (np.exp(-s * D) * (D + 1.0 / s)) @ amp)
    amp = amp / math.sqrt(n2)
    hv = hv / math.sqrt(n2)
    integral = float(amp.sum() * 2.0 / s)

    def fn(x):
        return np.exp(-s * np.abs(x[:, None] - locs[None, :])) @ amp

    return EigenfunctionHandle("atomic", 1, fn, integral,
                               {"locations": locs.copy(), "weights": w.copy(),
                                "values": hv, "s": s, "l2": 1.0})


def atomic_residual(locs, w, s, values) -> float:
    """max_i |h(x_i) - sum_j G(x_i, x_j) w_j h(x_j)| with G = e^{-s|x-y|}/s."""
    D = np.abs(locs[:, None] - locs[None, :])
    return float(np.max(np.abs(values - (np.exp(-s * D) / s) @ (w * values))))


def lambda_atomic(locations, weights, d: int = 1) -> SpectralResult:
    """Perron condition rho(K(lambda)) = 1 for atoms in d = 1.

    The kernel diagonal is singular for d >= 2, so those inputs raise
    SingularKernelError.  Evaluations of rho during the solve are checked
    to decrease in s.
    """
    if d != 1:
        raise SingularKernelError("atomic solver needs d = 1: the resolvent is infinite on "
                                  "the diagonal for d >= 2")
    locs = np.asarray(locations, dtype=float).reshape(-1)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if locs.size == 0 or locs.size != w.size:
        raise ValueError("need matching, nonempty atoms and weights")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    trace: list[tuple[float, float]] = []

    def f(s):
        rho = _perron(locs, w, s)[0]
        trace.append((s, rho))
        return math.log(rho)

    # row sums of K are <= sum(w)/s, with equality for a single atom
    hi = float(w.sum()) * (1 + 1e-12)
    lo = hi / 2
    while f(lo) <= 0:
        lo /= 2
        if lo < 1e-300:
            raise NoRootError("Perron root stays below 1")
    fhi = f(hi)
    s = hi if fhi == 0 else optimize.brentq(f, lo, hi, xtol=S_TOL, rtol=4 * np.finfo(float).eps)
    trace.sort()
    rhos = np.array([r for _, r in trace])
    monotone = bool(np.all(np.diff(rhos) <= 1e-14 * rhos[:-1]))
    if not monotone:
        raise RuntimeError("Perron root not decreasing in s; bisection invalid")
    h = _atomic_eigenfunction(locs, w, s)
    res = atomic_residual(locs, w, s, h.data["values"])
    return SpectralResult(-0.5 * s * s, "atomic_perron", h,
                          {"s": s, "residual": res, "perron_monotone": monotone})


def lattice_residual(p: float, result: SpectralResult, n_max: int = 30) -> float:
    """max over atoms of |h(n) - (1/s) sum_m h(m) exp(-|m|^p - s|n - m|)|."""
    h = result.eigenfunction
    locs, vals, s = h.data["locations"], h.data["values"], h.data["s"]
    w = np.exp(-np.abs(locs) ** p)
    return atomic_residual(locs, w, s, vals)


# ---------------------------------------------------------------------------
# grid solver
# ---------------------------------------------------------------------------

def grid_potential(measure: BranchingRateMeasure, nodes: np.ndarray, mode: str) -> np.ndarray:
    """Node values of the potential; atoms are deposited as mass/h at the nearest node."""
    k = measure.kind
    h = nodes[1] - nodes[0]
    V = np.zeros_like(nodes)
    if isinstance(k, (Atoms, LatticeAtoms)):
        if mode != "line_1d":
            raise ValueError("atoms need line_1d mode")
        locs, w = measure.atoms()
        idx = np.rint((locs[:, 0] - nodes[0]) / h).astype(int)
        inside = (idx >= 0) & (idx < nodes.size)
        np.add.at(V, idx[inside], w[inside] / h)
        return V
    if isinstance(k, SphereSurface):
        if mode != "radial_d3" or measure.dimension != 3:
            raise ValueError("sphere surface measure needs radial_d3 mode")
        i = int(np.rint((k.radius - nodes[0]) / h))
        V[i] += k.coupling / h
        return V
    if isinstance(k, BallIndicator):
        # fraction of each cell inside the ball
        frac = np.clip((k.radius - (np.abs(nodes) - h / 2)) / h, 0.0, 1.0)
        return k.coupling * frac
    if isinstance(k, PowerLawCompact):
        r = np.abs(nodes)
        with np.errstate(divide="ignore"):
            V = np.where(r <= k.radius, k.coupling * r ** (-k.exponent), 0.0)
        pole = r < h / 2
        if np.any(pole):
            if mode == "line_1d":
                # average of c|x|^{-p} over (-h/2, h/2)
                V[pole] = k.coupling * (h / 2) ** (-k.exponent) / (1 - k.exponent)
            else:
                V[pole] = 0.0
        return V
    if isinstance(k, (ExpDecay, MollifiedAtoms)):
        if mode == "radial_d3":
            if measure.dimension != 3:
                raise ValueError("radial_d3 mode needs a d = 3 measure")
            if isinstance(k, MollifiedAtoms):
                locs, _ = measure.atoms()
                if np.any(locs != 0) or len(locs) != 1:
                    raise ValueError("radial mode needs a single atom at the origin")
            pts = np.zeros((nodes.size, 3))
            pts[:, 0] = nodes
            return measure.density(pts)
        return measure.density(nodes.reshape(-1, 1))
    raise TypeError(type(k).__name__)


def lambda_grid(measure: BranchingRateMeasure | None, mode: str = "line_1d", X: float = 30.0,
                n: int = 6001, potential: np.ndarray | None = None,
                eigenfunction: bool = True) -> SpectralResult:
    """Bottom of the spectrum of -(1/2) d^2/dx^2 - V on a Dirichlet grid.

    line_1d: nodes on [-X, X].  radial_d3: acts on w = r u over (0, X],
    w(0) = w(X) = 0.  The lowest eigenpair of the symmetric tridiagonal
    matrix comes from LAPACK bisection plus inverse iteration; values
    >= -1e-10 are clamped to 0.  A warning is issued when the eigenvector
    has not decayed to 1e-8 of its peak at the box edge.
    """
    if mode not in ("line_1d", "radial_d3"):
        raise ValueError(f"unknown grid mode {mode!r}")
    if mode == "line_1d":
        nodes = np.linspace(-X, X, n)[1:-1]
    else:
        nodes = np.linspace(0.0, X, n)[1:-1]
    h = nodes[1] - nodes[0]
    if potential is not None:
        V = np.asarray(potential, dtype=float)
    elif measure is None:
        V = np.zeros_like(nodes)
    else:
        V = grid_potential(measure, nodes, mode)
    diag = 1.0 / h ** 2 - V
    off = np.full(nodes.size - 1, -0.5 / h ** 2)
    vals, vecs = eigh_tridiagonal(diag, off, select="i", select_range=(0, 0))
    lam = float(vals[0])
    method = "grid_1d" if mode == "line_1d" else "grid_radial"
    extra = {"X": X, "n": n, "h": h, "raw_lambda": lam}
    if lam >= -CLAMP:
        return SpectralResult(0.0, method, None, extra)
    v = np.abs(vecs[:, 0])
    edge = max(v[0], v[-1]) if mode == "line_1d" else v[-1]
    if edge > 1e-8 * v.max():
        warnings.warn(f"grid box X={X} too small: eigenvector at the edge is "
                      f"{edge / v.max():.2e} of its peak", RuntimeWarning, stacklevel=2)
    hfun = None
    if eigenfunction:
        if mode == "line_1d":
            u = v / math.sqrt(h * np.sum(v * v))
            integral = h * u.sum()
            xs, us = nodes.copy(), u

            def fn(x):
                return np.interp(x, xs, us, left=0.0, right=0.0)

            hfun = EigenfunctionHandle("grid", 1, fn, integral,
                                       {"nodes": xs, "values": us, "l2": 1.0})
        else:
            # w = r u, int u^2 dx = 4 pi int w^2 dr
            w = v / math.sqrt(4 * math.pi * h * np.sum(v * v))
            us = w / nodes
            integral = 4 * math.pi * h * np.sum(nodes * w)
            rs = nodes.copy()
            u0 = us[0]

            def fn(p):
                r = np.abs(p) if p.ndim == 1 else np.linalg.norm(p, axis=1)
                return np.interp(r, np.concatenate([[0.0], rs]), np.concatenate([[u0], us]),
                                 right=0.0)

            hfun = EigenfunctionHandle("radial", 3, fn, integral,
                                       {"nodes": rs, "values": us, "l2": 1.0})
    return SpectralResult(lam, method, hfun, extra)


def grid_threshold(make_measure: Callable[[float], BranchingRateMeasure], lo: float, hi: float,
                   mode: str = "radial_d3", X: float = 300.0, n: int = 30001,
                   rtol: float = 1e-4) -> float:
    """Coupling at which the grid eigenvalue first becomes negative (bisection)."""
    def negative(c):
        # near the threshold the ground state is barely bound and always reaches the edge
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return lambda_grid(make_measure(c), mode, X, n, eigenfunction=False).lam < 0

    if negative(lo) or not negative(hi):
        raise ValueError(f"threshold not bracketed by ({lo}, {hi})")
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if negative(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def spectral_for(measure: BranchingRateMeasure, offspring: OffspringLaw | None = None,
                 grid_X: float | None = None, grid_n: int = 6001) -> SpectralResult:
    """Principal eigenvalue of nu = (Q - 1) mu with the most accurate available solver."""
    q = 2.0 if offspring is None else offspring.mean
    if q <= 1.0:
        return SpectralResult(0.0, "closed_form")
    nu = measure.scaled(q - 1.0) if q != 2.0 else measure
    k, d = nu.kind, nu.dimension
    if isinstance(k, (Atoms, LatticeAtoms)):
        locs, w = nu.atoms()
        if len(w) == 1:
            return lambda_single_dirac(float(w[0]), float(locs[0, 0]))
        return lambda_atomic(locs[:, 0], w)
    if isinstance(k, SphereSurface):
        if d == 3:
            return lambda_delta_shell_d3(k.coupling, k.radius)
        return lambda_circle_d2(k.coupling, k.radius)
    if isinstance(k, BallIndicator):
        return {1: lambda_ball_d1, 2: lambda_ball_d2, 3: lambda_ball_d3}[d](k.coupling, k.radius)
    if d == 2:
        raise NotImplementedError("no d = 2 solver for this density")
    mode = "line_1d" if d == 1 else "radial_d3"
    X = grid_X if grid_X is not None else 60.0
    return lambda_grid(nu, mode, X, grid_n)


# ---------------------------------------------------------------------------
# resolvent, rate functions, Gaussian utilities
# ---------------------------------------------------------------------------

def green_resolvent(d: int, alpha: float, x, y) -> float:
    """Density G_alpha(x, y) of the alpha-resolvent of Brownian motion in R^d."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    r = float(np.linalg.norm(x - y))
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if d == 1:
        if not alpha > 0:
            raise ValueError("G_0 is infinite in d = 1")
        k = math.sqrt(2 * alpha)
        return math.exp(-k * r) / k
    if r == 0:
        raise ValueError(f"G_alpha(x, x) is infinite in d = {d}")
    if d == 2:
        if not alpha > 0:
            raise ValueError("G_0 is infinite in d = 2")
        return float(special.k0(math.sqrt(2 * alpha) * r)) / math.pi
    if d == 3:
        return math.exp(-math.sqrt(2 * alpha) * r) / (2 * math.pi * r)
    raise ValueError("d must be 1, 2 or 3")


def green_far_field(d: int, alpha: float, r: float) -> float:
    """Large-r form (1/sqrt(2 alpha)) (sqrt(2 alpha)/(2 pi r))^{(d-1)/2} e^{-sqrt(2 alpha) r}."""
    k = math.sqrt(2 * alpha)
    return (1 / k) * (k / (2 * math.pi * r)) ** ((d - 1) / 2) * math.exp(-k * r)


def big_lambda(lam: float, delta: float) -> float:
    """lambda + sqrt(-2 lambda) delta below the kink delta = sqrt(-2 lambda), delta^2/2 above."""
    if not lam < 0:
        raise ValueError("lambda must be negative")
    if delta < 0:
        raise ValueError("delta must be >= 0")
    s = math.sqrt(-2 * lam)
    return lam + s * delta if delta <= s else 0.5 * delta * delta


def split_objective(p, lam: float, delta: float):
    """F(p) = -lambda p - delta^2 / (2 (1 - p))."""
    p = np.asarray(p, dtype=float)
    return -lam * p - delta * delta / (2 * (1 - p))


def p_opt(lam: float, delta: float) -> float:
    """Maximiser of F on [0, 1): 1 - delta/sqrt(-2 lambda), or 0 past the kink."""
    if not lam < 0:
        raise ValueError("lambda must be negative")
    s = math.sqrt(-2 * lam)
    return max(0.0, 1.0 - delta / s)


def gaussian_tail(t: float, d: int, scaled: bool = False) -> float:
    """int_t^inf exp(-v^2/2) v^{d-1} dv; with scaled=True the factor exp(t^2/2) is removed."""
    if not t > 0:
        raise ValueError("t must be positive")
    f = lambda u: math.exp(-t * u - 0.5 * u * u) * (t + u) ** (d - 1)
    val = integrate.quad(f, 0, np.inf, epsabs=0, epsrel=1e-12, limit=200)[0]
    return val if scaled else math.exp(-0.5 * t * t) * val


def gaussian_tail_ratio(t: float, d: int) -> float:
    """Tail integral over its asymptote exp(-t^2/2) t^{d-2}."""
    return gaussian_tail(t, d, scaled=True) / t ** (d - 2)


def _radial_density(r, d, t, rho):
    """Density of |x + B_t| at r where |x| = rho."""
    if rho == 0:
        return _sphere_area(d) * r ** (d - 1) * (2 * math.pi * t) ** (-d / 2) * math.exp(-r * r / (2 * t))
    if d == 3:
        # difference of the two image Gaussians, written to avoid cancellation at small rho
        return (r / (rho * math.sqrt(2 * math.pi * t))) * (
            math.exp(-(r - rho) ** 2 / (2 * t)) * -math.expm1(-2 * r * rho / t))
    if d == 2:
        return (r / t) * math.exp(-(r - rho) ** 2 / (2 * t)) * special.ive(0, r * rho / t)
    raise ValueError("radial density needs d in {2, 3}")


def ball_exit_prob(d: int, t: float, R: float, x) -> float:
    """P_x(|B_t| >= R) by closed form (d = 1) or radial quadrature (d = 2, 3)."""
    rho = float(np.linalg.norm(np.atleast_1d(x)))
    if d == 1:
        st = math.sqrt(t)
        return float(norm.sf((R - rho) / st) + norm.cdf((-R - rho) / st))
    top = R + rho + 40 * math.sqrt(t)
    pts = [p for p in (rho,) if R < p < top]
    return integrate.quad(_radial_density, R, top, args=(d, t, rho), points=pts or None,
                          epsabs=1e-13, epsrel=1e-12, limit=200)[0]


def ball_exit_prob_ncx2(d: int, t: float, R: float, x) -> float:
    """Same probability from the noncentral chi-square law of |x + B_t|^2 / t."""
    rho = float(np.linalg.norm(np.atleast_1d(x)))
    if rho == 0:
        return float(special.gammaincc(d / 2, R * R / (2 * t)))
    return float(ncx2.sf(R * R / t, d, rho * rho / t))


def ball_tail_monotonicity(d: int, t: float, R: float, x, tol: float = 1e-8) -> bool:
    """Whether P_x(|B_t| >= R) >= P_0(|B_t| >= R) within tol."""
    if not (t > 0 and R > 0):
        raise ValueError("t and R must be positive")
    return ball_exit_prob(d, t, R, x) >= ball_exit_prob(d, t, R, np.zeros(d)) - tol

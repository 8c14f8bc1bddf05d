"""Compiled inner loops: densities, additive-functional increments, particle stepping."""
import math

import numpy as np
from numba import njit

KIND_ZERO = 0
KIND_ATOMS_BAND = 1
KIND_SPHERE_BAND = 2
KIND_BALL = 3
KIND_POWERLAW = 4
KIND_EXPDECAY = 5
KIND_MOLLIFIED = 6


@njit(cache=True)
def _norm(x):
    s = 0.0
    for k in range(x.shape[0]):
        s += x[k] * x[k]
    return math.sqrt(s)


@njit(cache=True)
def density_value(kind, fp, locs, wts, x):
    """V(x) for density kinds; inf at the pole of a power law."""
    if kind == KIND_BALL:
        return fp[1] if _norm(x) <= fp[0] else 0.0
    if kind == KIND_POWERLAW:
        r = _norm(x)
        if r > fp[0]:
            return 0.0
        if r == 0.0:
            return math.inf if fp[2] > 0 else (fp[1] if fp[2] == 0 else 0.0)
        return fp[1] * r ** (-fp[2])
    if kind == KIND_EXPDECAY:
        return fp[1] * math.exp(-_norm(x) ** fp[0])
    if kind == KIND_MOLLIFIED:
        d = x.shape[0]
        w = fp[0]
        norm = (2.0 * math.pi * w * w) ** (-0.5 * d)
        s = 0.0
        for j in range(wts.shape[0]):
            r2 = 0.0
            for k in range(d):
                dx = x[k] - locs[j, k]
                r2 += dx * dx
            s += wts[j] * math.exp(-0.5 * r2 / (w * w))
        return s * norm
    return 0.0


@njit(cache=True)
def density_batch(kind, fp, locs, wts, pts):
    out = np.empty(pts.shape[0])
    for i in range(pts.shape[0]):
        out[i] = density_value(kind, fp, locs, wts, pts[i])
    return out


@njit(cache=True)
def pcaf_inc(kind, fp, locs, wts, eps, xp, xn, dt):
    """Increment of A over one step from xp to xn.

    Densities use the trapezoid rule (a singular endpoint borrows the
    other endpoint's value).  Atoms (d = 1) and spheres use midpoint band
    membership with weight dt / (2 eps).
    """
    if kind == KIND_ZERO:
        return 0.0
    if kind == KIND_ATOMS_BAND:
        mid = 0.5 * (xp[0] + xn[0])
        s = 0.0
        for j in range(wts.shape[0]):
            if abs(mid - locs[j, 0]) < eps:
                s += wts[j]
        return s * dt / (2.0 * eps)
    if kind == KIND_SPHERE_BAND:
        r2 = 0.0
        for k in range(xp.shape[0]):
            m = 0.5 * (xp[k] + xn[k])
            r2 += m * m
        if abs(math.sqrt(r2) - fp[0]) < eps:
            return fp[1] * dt / (2.0 * eps)
        return 0.0
    va = density_value(kind, fp, locs, wts, xp)
    vb = density_value(kind, fp, locs, wts, xn)
    if not math.isfinite(va):
        va = vb
    if not math.isfinite(vb):
        vb = va
    if not math.isfinite(va):
        return 0.0
    return 0.5 * dt * (va + vb)


@njit(cache=True)
def pcaf_inc_batch(kind, fp, locs, wts, eps, xp, xn, dt):
    out = np.empty(xp.shape[0])
    for i in range(xp.shape[0]):
        out[i] = pcaf_inc(kind, fp, locs, wts, eps, xp[i], xn[i], dt)
    return out


@njit(cache=True)
def seed_kernel_rng(seed):
    np.random.seed(seed)


@njit(cache=True)
def draw_exponential(n):
    out = np.empty(n)
    for i in range(n):
        out[i] = np.random.exponential(1.0)
    return out


@njit(cache=True)
def _resolve_branches(pos, A, tau, ids, parents, n, off_vals, off_cdf, cap, next_id):
    """Replace every particle whose clock has fired by its offspring.

    Returns (status, n, events, next_id) with status 0 (done), 1 (storage
    full, nothing drawn for the pending particle) or 2 (cap exceeded).
    """
    d = pos.shape[1]
    storage = pos.shape[0]
    max_child = off_vals[off_vals.shape[0] - 1]
    events = 0
    n0 = n
    for i in range(n0):
        if A[i] < tau[i]:
            continue
        if n + max_child - 1 > storage and n + max_child - 1 <= cap:
            return 1, n, events, next_id
        u = np.random.random()
        k = 0
        while k < off_vals.shape[0] - 1 and off_cdf[k] <= u:
            k += 1
        nchild = off_vals[k]
        if n + nchild - 1 > cap:
            return 2, n, events, next_id
        if n + nchild - 1 > storage:
            return 1, n, events, next_id
        par = ids[i]
        for c in range(1, nchild):
            for q in range(d):
                pos[n, q] = pos[i, q]
            A[n] = 0.0
            tau[n] = np.random.exponential(1.0)
            ids[n] = next_id
            parents[n] = par
            next_id += 1
            n += 1
        A[i] = 0.0
        tau[i] = np.random.exponential(1.0)
        ids[i] = next_id
        parents[i] = par
        next_id += 1
        events += 1
    return 0, n, events, next_id


@njit(cache=True)
def advance_steps(pos, A, tau, ids, parents, n, nsteps, dt, kind, fp, locs, wts, eps,
                  off_vals, off_cdf, cap, next_id, xstep):
    """Advance n live particles by nsteps steps of size dt.

    Every particle receives an N(0, dt I) displacement and its clock
    increment; a particle whose clock reaches its threshold is replaced by
    its first child at the end-of-step position and the remaining children
    are appended.  Draws come from the kernel RNG (seed with
    seed_kernel_rng).

    Returns (status, n, steps_done, events, next_id).  status 0: done;
    1: storage full, grow the arrays and call again with the remaining
    steps (pending branches are resolved first); 2: the population cap
    would be exceeded.
    """
    d = pos.shape[1]
    sd = math.sqrt(dt)
    events = 0
    for step in range(nsteps):
        st, n, ev, next_id = _resolve_branches(pos, A, tau, ids, parents, n, off_vals,
                                               off_cdf, cap, next_id)
        events += ev
        if st != 0:
            return st, n, step, events, next_id
        for i in range(n):
            for q in range(d):
                xstep[q] = pos[i, q]
                pos[i, q] += sd * np.random.standard_normal()
            A[i] += pcaf_inc(kind, fp, locs, wts, eps, xstep, pos[i], dt)
    st, n, ev, next_id = _resolve_branches(pos, A, tau, ids, parents, n, off_vals,
                                           off_cdf, cap, next_id)
    return st, n, nsteps, events + ev, next_id

"""Scenario presets: config -> measure, offspring law, spectral data and settings."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .. import measures as M
from .. import spectral as S
from ..bbm_sim import SimSettings
from .config import SimConfig


@dataclass
class Scenario:
    config: SimConfig
    measure: M.BranchingRateMeasure
    offspring: M.OffspringLaw
    spectral: S.SpectralResult
    settings: SimSettings
    provenance: str

    @property
    def lam(self) -> float:
        return self.spectral.lam

    @property
    def surrogate_conditioned(self) -> bool:
        """d >= 3 with a bound state: conditioning on survival uses the burn-in surrogate."""
        return self.config.dimension >= 3 and self.lam < 0

    @property
    def subcritical_d3(self) -> bool:
        return self.config.dimension == 3 and self.lam == 0.0


def build_measure(cfg: SimConfig) -> M.BranchingRateMeasure:
    p, d = cfg.params, cfg.dimension
    s = cfg.scenario
    if s == "dirac1d":
        return M.dirac(p["c"], p["a"])
    if s == "two_diracs":
        return M.two_diracs(p["c1"], p["c2"], p["a"])
    if s == "lattice":
        return M.lattice(p["p"], int(p["n_max"]))
    if s in ("sphere_d3", "sphere_d2"):
        return M.sphere(p["c"], p["R"], d)
    if s == "ball":
        return M.ball(p["c"], p["R"], d)
    if s == "powerlaw":
        return M.BranchingRateMeasure(d, M.PowerLawCompact(p["R"], p["p"], p["c"]))
    if s == "expdecay":
        return M.BranchingRateMeasure(d, M.ExpDecay(p["p"], p["c"]))
    if s == "mollified_dirac":
        return M.BranchingRateMeasure(d, M.MollifiedAtoms(((0.0,) * d,), (p["c"],),
                                                          p["width"]))
    raise ValueError(f"unknown scenario {s!r}")


def build_offspring(cfg: SimConfig) -> M.OffspringLaw:
    if "geometric" in cfg.offspring:
        return M.OffspringLaw.geometric(cfg.offspring["geometric"])
    return M.OffspringLaw.from_mapping({int(k): v for k, v in cfg.offspring.items()})


_PROVENANCE = {
    "closed_form": "lambda = -c^2/2 (single atom)",
    "transcendental": "root of the matching equation",
    "atomic_perron": "Perron root of the resolvent matrix on the atoms",
    "grid_1d": "finite-difference ground state on the line",
    "grid_radial": "finite-difference radial ground state",
}


def build(cfg: SimConfig) -> Scenario:
    measure = build_measure(cfg)
    offspring = build_offspring(cfg)
    spec = S.spectral_for(measure, offspring)
    settings = SimSettings(horizon=cfg.sim.horizon, record_every=cfg.sim.record_every,
                           dt=cfg.sim.dt, eps=cfg.sim.eps,
                           population_cap=cfg.sim.population_cap,
                           deltas=tuple(cfg.deltas),
                           directions=tuple(tuple(r) for r in cfg.directions),
                           engine=cfg.sim.engine)
    return Scenario(cfg, measure, offspring, spec, settings,
                    _PROVENANCE.get(spec.method, spec.method))


def ball_coupling_for_lambda(lam: float, R: float = 1.0, d: int = 2) -> float:
    """Coupling c of c 1{|x| <= R} whose principal eigenvalue equals lam < 0."""
    solver = {1: S.lambda_ball_d1, 2: S.lambda_ball_d2, 3: S.lambda_ball_d3}[d]
    lo = S.ball_critical_coupling(R, d) * 1.0001 if d == 3 else 0.1
    hi = max(1.0, 2 * lo)
    while solver(hi, R).lam > lam:
        hi *= 2
    return optimize.brentq(lambda c: solver(c, R).lam - lam, lo, hi, xtol=1e-14, rtol=1e-14)

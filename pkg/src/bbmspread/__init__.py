"""Branching Brownian motion with measure-valued branching rates.

Eigenvalue solvers, particle simulation, Feynman-Kac estimators and an
FKPP front solver, plus a harness that checks the resulting spread rates.
"""
from .measures import (BranchingRateMeasure, OffspringLaw, classify_measure,
                       PcafAccumulator, pcaf_increment, sample_bm_localtime_joint,
                       sample_offspring)

__all__ = [
    "BranchingRateMeasure",
    "OffspringLaw",
    "classify_measure",
    "PcafAccumulator",
    "pcaf_increment",
    "sample_bm_localtime_joint",
    "sample_offspring",
]
__version__ = "0.1.0"

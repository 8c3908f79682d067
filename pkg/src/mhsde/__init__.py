"""Simulation of hybrid SDEs whose regime switches depend on the joint path history.

The discrete component is driven by a dominating Poisson process with
thinning marks; the Euclidean component is advanced between candidate
jump times by per-mode SDE solvers sharing one noise tape.
"""

__version__ = "0.1.0"

from .engine import ModelSpec, simulate, simulate_coupled, simulate_many
from .errors import ConfigError, DomainError, MhsdeError, RateBoundError, ResourceError, SolverBlowUpError
from .kernel import IntensitySpec, RateRow, apply_mark, canonical_partition
from .noise import CompoundPoissonSpec, NoiseTape, generate_tape
from .paths import HybridPath, HybridState, sup_distance

__all__ = [
    "ModelSpec", "simulate", "simulate_coupled", "simulate_many",
    "ConfigError", "DomainError", "MhsdeError", "RateBoundError", "ResourceError", "SolverBlowUpError",
    "IntensitySpec", "RateRow", "apply_mark", "canonical_partition",
    "CompoundPoissonSpec", "NoiseTape", "generate_tape",
    "HybridPath", "HybridState", "sup_distance",
]

"""Semi-discrete random matching on the flat torus and the unit square.

The pipeline: sample n uniform points, solve the semi-discrete optimal
transport problem from the uniform measure onto them, and compare the optimal
map with exp(grad f), where f solves a Poisson equation driven by the
heat-smoothed empirical measure. Supporting pieces cover the Hopf-Lax
semigroup, a stability check for optimal maps and a Monte Carlo harness.
"""

__version__ = "0.1.0"

from ._backend import BACKEND
from .fields import ResolutionError, ScalarField, VectorField
from .geometry import Domain, DomainKind, Grid
from .heat import PointCloud, heat_evolve, matching_field, sample_cloud, solve_poisson
from .hopflax import (
    HopfLaxResult,
    c_transform,
    hj_residual,
    hopflax_characteristics,
    hopflax_grid,
    lip_defect,
    strict_convexity_gap,
)
from .semidiscrete import (
    SemiDiscretePlan,
    SolverError,
    TransportMapGrid,
    WeightedPoints,
    pushforward_density,
    solve_semidiscrete,
)
from .sinkhorn import W2Bracket, sinkhorn_w2
from .stability import StabilityReport, perturbation_scaling, stability_check
from .experiments import TrialConfig, TrialRecord, run_trial, schedule, sweep

__all__ = [
    "BACKEND",
    "Domain",
    "DomainKind",
    "Grid",
    "HopfLaxResult",
    "PointCloud",
    "ResolutionError",
    "ScalarField",
    "SemiDiscretePlan",
    "SolverError",
    "StabilityReport",
    "TransportMapGrid",
    "TrialConfig",
    "TrialRecord",
    "VectorField",
    "W2Bracket",
    "WeightedPoints",
    "c_transform",
    "heat_evolve",
    "hj_residual",
    "hopflax_characteristics",
    "hopflax_grid",
    "lip_defect",
    "matching_field",
    "perturbation_scaling",
    "pushforward_density",
    "run_trial",
    "sample_cloud",
    "schedule",
    "solve_poisson",
    "solve_semidiscrete",
    "sinkhorn_w2",
    "stability_check",
    "strict_convexity_gap",
    "sweep",
]

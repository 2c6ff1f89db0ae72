"""Monte Carlo toolkit for a discrete-time radar model of space-time.

Proper-time intervals are integer chronon counts, and every classically
linear link between two intervals becomes a Poisson draw with the classical
value as its mean.
"""
__version__ = "0.1.0"

from .core import (  # noqa: E402
    BUILTIN_SPECIES,
    ELECTRON,
    ChrononCount,
    ChrononError,
    ClassicalInterval,
    DegenerateSampleError,
    HalfIntCoord,
    KFactor,
    ParticleSpecies,
    Velocity,
    coords_from_counts,
    k_from_velocity,
    load_species,
    si_conversion,
    velocity_from_k,
)
from .sampling import PoissonLaw, RngStream, poisson_pmf, poisson_sample, truncation_bound  # noqa: E402
from .ensemble import ExperimentSpec, EnsembleSummary, run_ensemble, oracle_expectation  # noqa: E402

__all__ = [
    "BUILTIN_SPECIES", "ELECTRON", "ChrononCount", "ChrononError", "ClassicalInterval",
    "DegenerateSampleError", "HalfIntCoord", "KFactor", "ParticleSpecies", "Velocity",
    "coords_from_counts", "k_from_velocity", "load_species", "si_conversion", "velocity_from_k",
    "PoissonLaw", "RngStream", "poisson_pmf", "poisson_sample", "truncation_bound",
    "ExperimentSpec", "EnsembleSummary", "run_ensemble", "oracle_expectation",
]

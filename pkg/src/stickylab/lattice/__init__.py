"""Lattice walk approximation of the sticky skew diffusion."""

from stickylab.lattice.coupling import CoupledRun, MaxMinSummary, couple_solutions, max_min_process
from stickylab.lattice.ensemble import (
    INTERACTING,
    Ensemble,
    FixedPointError,
    SampleSizeWarning,
    ToleranceBelowNoiseError,
    atom_estimate,
    boundary_density,
    constant_table,
    empirical_char_fn,
    mckean_vlasov_iterate,
    simulate_ensemble,
)
from stickylab.lattice.paths import (
    PathChunk,
    PathRecord,
    TanakaError,
    max_min_paths,
    simulate_pair_paths,
    simulate_paths,
    tanaka_local_time,
    tanaka_residuals,
)
from stickylab.lattice.walk import (
    GridMismatchError,
    StepResult,
    WalkParams,
    exit_up_prob,
    lattice_site,
    stay_prob,
    step,
)

__all__ = [
    "INTERACTING",
    "CoupledRun",
    "Ensemble",
    "FixedPointError",
    "GridMismatchError",
    "MaxMinSummary",
    "PathChunk",
    "PathRecord",
    "SampleSizeWarning",
    "StepResult",
    "TanakaError",
    "ToleranceBelowNoiseError",
    "WalkParams",
    "atom_estimate",
    "boundary_density",
    "constant_table",
    "couple_solutions",
    "empirical_char_fn",
    "exit_up_prob",
    "lattice_site",
    "max_min_paths",
    "max_min_process",
    "mckean_vlasov_iterate",
    "simulate_ensemble",
    "simulate_pair_paths",
    "simulate_paths",
    "stay_prob",
    "step",
    "tanaka_local_time",
    "tanaka_residuals",
]

"""Parity-aware pseudo-spectral Brinkman-Forchheimer-Benard solver."""
from .spectral import Grid, Parity, SpectralField, build_grid
from .model import PhysicalParams, State
from .integrator import IntegratorConfig, integrate, step
from .diagnostics import compute_bounds, compute_norms, check_absorbing_ball
from .assimilation import InterpolantSpec, TwinExperimentConfig, run_twin_experiment

__all__ = [
    "Grid", "Parity", "SpectralField", "build_grid", "PhysicalParams", "State",
    "IntegratorConfig", "integrate", "step", "compute_bounds", "compute_norms",
    "check_absorbing_ball", "InterpolantSpec", "TwinExperimentConfig",
    "run_twin_experiment",
]

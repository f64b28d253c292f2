"""Feynman-Kac Monte Carlo and exact diagonalization for the two-dimensional
relativistic Nelson model with and without ultraviolet cutoff."""

__version__ = "0.1.0"

from .model import INF, ModelParams, e_ren, omega, psi
from .grid import GridSpec, FieldVector, coarse_grid, make_grid
from .levy import LevyPath, sample_path, sample_paths
from .action import action_defining, action_ito, action_renormalized, path_functionals
from .fock import CoherentLabel, fiber_w_element, flow_check, w_on_coherent
from .mc import MCEstimate, fiber_semigroup, lambda_sweep
from .oracle import TruncatedFock, build_fiber, ground_energy, mc_vs_oracle

__all__ = [
    "INF", "ModelParams", "e_ren", "omega", "psi",
    "GridSpec", "FieldVector", "coarse_grid", "make_grid",
    "LevyPath", "sample_path", "sample_paths",
    "action_defining", "action_ito", "action_renormalized", "path_functionals",
    "CoherentLabel", "fiber_w_element", "flow_check", "w_on_coherent",
    "MCEstimate", "fiber_semigroup", "lambda_sweep",
    "TruncatedFock", "build_fiber", "ground_energy", "mc_vs_oracle",
]

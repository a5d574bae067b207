"""Continuous decompositions of two-outcome quantum measurements into weak-measurement random walks."""

from .linalg import distinct_singular_values, hermitian_exp, probe_sandwich, proportionality_residual, tensor
from .probe import InteractionHamiltonian, ProbeBasis, ProbeScheme, build_probe_basis, rotate_hamiltonian, step_operator
from .walk import WalkConfig, run_ensemble, run_trajectory
from .zz import DiagonalTarget, build_zz_scheme, endpoint_operators_analytic

__version__ = "0.1.0"

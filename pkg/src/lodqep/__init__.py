"""Multiscale (LOD) approximation of damped quadratic eigenvalue problems
with rough coefficients on the unit square.
"""
from .errors import (AggregationError, AlignmentError, AssumptionViolation, ConfigError,
                     ConvergenceError, FactorizationError, ParameterError,
                     PatchConfigurationError, SolverError, SolverFailure)
from .experiment import (ConvergenceReport, ExperimentConfig, emit, fit_rate, load_report,
                         preset, run_experiment)
from .lod import LodBasis, LodContext, build_basis, compress, element_corrector, node_corrector
from .mesh import TriMesh, build_uniform, coarse_fine_map, element_patch
from .qep import QepSystem, Spectrum, match_spectra, solve_coarse, solve_fine

__version__ = "0.1.0"

__all__ = [
    "AggregationError", "AlignmentError", "AssumptionViolation", "ConfigError",
    "ConvergenceError", "FactorizationError", "ParameterError", "PatchConfigurationError",
    "SolverError", "SolverFailure",
    "ConvergenceReport", "ExperimentConfig", "emit", "fit_rate", "load_report", "preset",
    "run_experiment",
    "LodBasis", "LodContext", "build_basis", "compress", "element_corrector", "node_corrector",
    "TriMesh", "build_uniform", "coarse_fine_map", "element_patch",
    "QepSystem", "Spectrum", "match_spectra", "solve_coarse", "solve_fine",
]

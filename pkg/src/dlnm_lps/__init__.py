"""Penalized distributed-lag non-linear models with spatial effect modification.

Models are fitted by a nested Laplace approximation: Newton iterations find the
conditional mode of the coefficients and L-BFGS-B maximises the approximate
marginal posterior of the smoothing, spatial and dispersion parameters.
"""
from .basis import BasisSpec, bspline_spec, eval_basis, natural_spec, penalty_block
from .crossbasis import CrossBasis, build_crossbasis, build_history, build_interaction
from .errors import (ConsistencyError, DataError, DLNMError, DomainError, InnerConvergenceError,
                     NumericalError, ScoringError, ShapeError, SpecError)
from .fit import FittedModel, fit_dlnm
from .inference import RRQuery, attributable_fraction, exceedance_prob, log_rr, rrr
from .laplace import FitResult, Hyperparams, LaplaceProblem, compute_dic, inner_mode
from .model import Family, MainEffect, ModelSpec, Modifier, assemble_penalty, build_model
from .panel import TimeSeriesPanel, read_panel_csv, to_percentiles, write_panel_csv
from .simgen import (ScenarioSpec, TrueSurface, generate_panel, run_study, score, true_log_rr)
from .spatial import AdjacencyGraph, SpatialSpec, lattice_graph, precision, read_adjacency_csv

__all__ = [
    "AdjacencyGraph", "BasisSpec", "ConsistencyError", "CrossBasis", "DLNMError", "DataError",
    "DomainError", "Family", "FitResult", "FittedModel", "Hyperparams", "InnerConvergenceError",
    "LaplaceProblem", "MainEffect", "ModelSpec", "Modifier", "NumericalError", "RRQuery",
    "ScenarioSpec", "ScoringError", "ShapeError", "SpatialSpec", "SpecError", "TimeSeriesPanel",
    "TrueSurface", "assemble_penalty", "attributable_fraction", "bspline_spec", "build_crossbasis",
    "build_history", "build_interaction", "build_model", "compute_dic", "eval_basis",
    "exceedance_prob", "fit_dlnm", "generate_panel", "inner_mode", "lattice_graph", "log_rr",
    "natural_spec", "penalty_block", "precision", "read_adjacency_csv", "read_panel_csv", "rrr",
    "run_study", "score", "to_percentiles", "true_log_rr", "write_panel_csv",
]

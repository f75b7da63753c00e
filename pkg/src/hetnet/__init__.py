"""Estimation and inference for heterogeneous endogenous effects in networks."""

from .dgp import StructuralParams, simulate_base, simulate_cliques, simulate_multinet
from .estimator import (FitResult, TuningPolicy, fit_2slss, fit_2slss_cliques,
                        fit_2slss_multinet, oracle_2sls)
from .inference import InferenceResult, bh_fdr, infer
from .lasso_core import PenalizedProblem, SolverConfig, lasso_fit, sparse_group_lasso_fit
from .montecarlo import MCReport, StudyConfig, run_study
from .network import AdjacencyMatrix, MultiNetwork, col_scale, erdos_renyi, watts_strogatz

__version__ = "0.1.0"

__all__ = [
    "AdjacencyMatrix", "FitResult", "InferenceResult", "MCReport", "MultiNetwork",
    "PenalizedProblem", "SolverConfig", "StructuralParams", "StudyConfig", "TuningPolicy",
    "bh_fdr", "col_scale", "erdos_renyi", "fit_2slss", "fit_2slss_cliques",
    "fit_2slss_multinet", "infer", "lasso_fit", "oracle_2sls", "run_study",
    "simulate_base", "simulate_cliques", "simulate_multinet", "sparse_group_lasso_fit",
    "watts_strogatz",
]

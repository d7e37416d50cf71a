"""Directed degree-heterogeneity network model with dyad covariates.

Edges ``i -> j`` are independent Bernoulli with log-odds
``Z_ij' gamma + alpha_i + beta_j`` and ``beta_n = 0`` for identification.
"""
__version__ = "0.1.0"

from .estimation import (Existence, FitConfig, FitResult, Status, check_existence,
                         degenerate_nodes, fit, solve_theta_given_gamma)
from .fisher import (ApproxInverse, ConditioningWarning, FisherBlocks, blocks_from_probs,
                     build_S, build_V, profile_information)
from .inference import (InferenceReport, gamma_bias, gamma_inference, homogeneity_stats,
                        pair_interval, theta_standard_errors)
from .model import (DirectedGraph, DyadCovariates, ModelParams, NodeCovariates, dyad_prob,
                    log_likelihood, prob_matrix, score)
from .simulation import SimDesign, SimTable, make_covariates, make_truth, run_campaign, sample_graph

__all__ = [
    "ApproxInverse", "ConditioningWarning", "DirectedGraph", "DyadCovariates", "Existence",
    "FisherBlocks", "FitConfig", "FitResult", "InferenceReport", "ModelParams",
    "NodeCovariates", "SimDesign", "SimTable", "Status", "blocks_from_probs", "build_S",
    "build_V", "check_existence", "degenerate_nodes", "dyad_prob", "fit", "gamma_bias",
    "gamma_inference", "homogeneity_stats", "log_likelihood", "make_covariates", "make_truth",
    "pair_interval", "prob_matrix", "profile_information", "run_campaign", "sample_graph",
    "score", "solve_theta_given_gamma", "theta_standard_errors",
]

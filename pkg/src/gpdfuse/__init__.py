"""Fused estimation of generalized Pareto shape parameters across clusters."""
from .gpd import (DomainError, ExceedanceData, ClusterExceedances, FisherInfo, GpdParams,
                  TooFewExceedances, fisher_info, grad_neg_loglik, log_density, neg_loglik)
from .fitting import MleFit, fit_clusterwise, fit_grouped
from .penalty import WeightSpec, weight
from .graph import (ClusterGraph, apply_incidence, build_graph_band, build_graph_chi,
                    build_graph_homogeneity, connected_components)
from .admm import (AdmmOptions, FusedFit, PathResult, admm_fit, bic, find_lambda_max, fit_path,
                   soft_threshold, solve_path)
from .inference import ReturnLevelEstimate, exceed_prob, return_level, return_level_ci
from .taildep import chi_hat, chi_matrix
from .threshold import RiskPath, mean_residual_life, qq_risk, qq_risk_path, select_k
from .simulate import EvalReport, ScenarioConfig, evaluate, generate, preset

__all__ = [
    "DomainError", "ExceedanceData", "ClusterExceedances", "FisherInfo", "GpdParams",
    "TooFewExceedances", "fisher_info", "grad_neg_loglik", "log_density", "neg_loglik",
    "MleFit", "fit_clusterwise", "fit_grouped", "WeightSpec", "weight", "ClusterGraph",
    "apply_incidence", "build_graph_band", "build_graph_chi", "build_graph_homogeneity",
    "connected_components", "AdmmOptions", "FusedFit", "PathResult", "admm_fit", "bic",
    "find_lambda_max", "fit_path", "soft_threshold", "solve_path",
    "ReturnLevelEstimate", "exceed_prob", "return_level", "return_level_ci",
    "chi_hat", "chi_matrix", "RiskPath", "mean_residual_life", "qq_risk", "qq_risk_path", "select_k",
    "EvalReport", "ScenarioConfig", "evaluate", "generate", "preset",
]

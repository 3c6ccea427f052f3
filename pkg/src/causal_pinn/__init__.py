"""Causal operator discovery with physics-informed surrogates.

Fit a sine network to observations while sparsifying an operator library,
then test each surviving term by intervening on it and re-solving.
"""
from .model import (CoefficientEstimate, Intervention, OperatorSpec, SampleSet, SpaceTimeDomain,
                    StructuralModel, apply_intervention, library_of, validate_model)
from .surrogate import Jet2, SurrogateNet, eval_jet, eval_param_grad, init_net
from .operators import (AnalyticField, DesignMatrix, apply_operator, assemble_design, l2_norm,
                        mutual_coherence, residual_field)
from .solvers import (BenchmarkSpec, GriddedField, generate_benchmark, get_benchmark, solve_counterfactual,
                      solve_fd)
from .sparse import LassoProblem, certify_recovery, ista_solve, lambda_sweep, soft_threshold
from .trainer import TrainConfig, loss, retrain_counterfactual, train, train_baseline_pinn
from .diagnostics import (DiagnosticsReport, adjoint_sensitivity, causal_derivative, causal_influence,
                          check_residual_bound, classify_relevance, counterfactual_deviation, csi, diagnose)

__all__ = [
    "CoefficientEstimate",
    "Intervention",
    "OperatorSpec",
    "SampleSet",
    "SpaceTimeDomain",
    "StructuralModel",
    "apply_intervention",
    "library_of",
    "validate_model",
    "Jet2",
    "SurrogateNet",
    "eval_jet",
    "eval_param_grad",
    "init_net",
    "AnalyticField",
    "DesignMatrix",
    "apply_operator",
    "assemble_design",
    "l2_norm",
    "mutual_coherence",
    "residual_field",
    "BenchmarkSpec",
    "GriddedField",
    "generate_benchmark",
    "get_benchmark",
    "solve_counterfactual",
    "solve_fd",
    "LassoProblem",
    "certify_recovery",
    "ista_solve",
    "lambda_sweep",
    "soft_threshold",
    "TrainConfig",
    "loss",
    "retrain_counterfactual",
    "train",
    "train_baseline_pinn",
    "DiagnosticsReport",
    "adjoint_sensitivity",
    "causal_derivative",
    "causal_influence",
    "check_residual_bound",
    "classify_relevance",
    "counterfactual_deviation",
    "csi",
    "diagnose",
]

__version__ = "0.1.0"

"""Ranking objects from noisy pairwise comparisons made by workers of unknown reliability."""

from .baseline import AgConfig, AgResult, run_ag
from .bcrb import bim_components, quality_mse_bound, reliability_mse_bound
from .errors import (BoundaryError, ConstructionError, DataError, DomainError, NumericError, ParameterError,
                     QuiteError, RankError, StateError, UnsupportedPriorError)
from .estimation import EstimateState, QuiteConfig, QuiteResult, run_quite
from .experiments import ExperimentConfig, emit_outputs, run_experiment
from .graph import Assignment, ComparisonGraph, random_regular_graph, regular_assignment
from .metrics import affine_adjusted_mse, calibrate_scale, is_epsilon_quality, ranking_from_qualities
from .models import Empirical, Gaussian, PlanckTaper, Prior, TriangularDifference, Uniform, WorkerModel
from .multistage import TwoStageResult, run_two_stage
from .simulation import AnswerSet, GroundTruth, generate_answers, sample_ground_truth

__version__ = "0.1.0"

__all__ = [
    "AgConfig", "AgResult", "AnswerSet", "Assignment", "BoundaryError", "ComparisonGraph", "ConstructionError",
    "DataError", "DomainError", "Empirical", "EstimateState", "ExperimentConfig", "Gaussian", "GroundTruth",
    "NumericError", "ParameterError", "PlanckTaper", "Prior", "QuiteConfig", "QuiteError", "QuiteResult",
    "RankError", "StateError", "TriangularDifference", "TwoStageResult", "Uniform", "UnsupportedPriorError",
    "WorkerModel", "affine_adjusted_mse", "bim_components", "calibrate_scale", "emit_outputs",
    "generate_answers", "is_epsilon_quality", "quality_mse_bound", "random_regular_graph",
    "ranking_from_qualities", "regular_assignment", "reliability_mse_bound", "run_ag", "run_experiment",
    "run_quite", "run_two_stage", "sample_ground_truth",
]

"""Serverless function memory sizing: predict execution time across memory
sizes from single-size monitoring data and recommend the optimal size."""

from rightsizer.domain import (
    AWS_PRICING,
    MEMORY_SIZES_MB,
    METRIC_NAMES,
    ExecutionCurve,
    MeasurementSummary,
    MetricVector,
    PricingModel,
    execution_cost,
)
from rightsizer.features import (
    build_matrix,
    pair_dataset,
    select_features,
    sequential_forward_selection,
    target_matrix,
)
from rightsizer.model import (
    EvaluationMetrics,
    Hyperparameters,
    MlpRegressor,
    cross_validate,
    evaluate,
    predict,
    train,
)
from rightsizer.optimizer import (
    TradeoffParameter,
    benefit,
    optimize_from_monitoring,
    rank_quality,
    score,
)
from rightsizer.simgen import (
    FunctionProfile,
    WorkloadSpec,
    generate_dataset,
    generate_profiles,
    ground_truth,
)
from rightsizer.stability import (
    cliffs_delta,
    cliffs_delta_magnitude,
    mann_whitney_u,
    stability_analysis,
)

__all__ = [
    "AWS_PRICING",
    "MEMORY_SIZES_MB",
    "METRIC_NAMES",
    "EvaluationMetrics",
    "ExecutionCurve",
    "FunctionProfile",
    "Hyperparameters",
    "MeasurementSummary",
    "MetricVector",
    "MlpRegressor",
    "PricingModel",
    "TradeoffParameter",
    "WorkloadSpec",
    "benefit",
    "build_matrix",
    "cliffs_delta",
    "cliffs_delta_magnitude",
    "cross_validate",
    "evaluate",
    "execution_cost",
    "generate_dataset",
    "generate_profiles",
    "ground_truth",
    "mann_whitney_u",
    "optimize_from_monitoring",
    "pair_dataset",
    "predict",
    "rank_quality",
    "score",
    "select_features",
    "sequential_forward_selection",
    "stability_analysis",
    "target_matrix",
    "train",
]

__version__ = "0.1.0"

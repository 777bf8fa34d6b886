"""Estimate external model performance from summary statistics by reweighting an internal sample."""

from .balancer import SolverConfig, Status, WeightSolution, balance, solve, worst_case_bound
from .data import MomentTarget, Sample, Term, TransformSpec, apply_transforms, stats_from_sample
from .metrics import Metric, MetricEstimate, ScoredSample, bootstrap_ci, weighted_auc

__version__ = "0.1.0"
SCHEMA_VERSION = "1"

__all__ = [
    "Metric",
    "MetricEstimate",
    "MomentTarget",
    "SCHEMA_VERSION",
    "Sample",
    "ScoredSample",
    "SolverConfig",
    "Status",
    "Term",
    "TransformSpec",
    "WeightSolution",
    "apply_transforms",
    "balance",
    "bootstrap_ci",
    "solve",
    "stats_from_sample",
    "weighted_auc",
    "worst_case_bound",
]

"""Graph mixing additive networks over sets of sparse timestamped trajectories."""

from .data import (
    Dataset,
    PartitionSpec,
    Trajectory,
    TrajectorySet,
    ValidationError,
    normalize,
    time_delta,
    validate_partition,
)
from .extgnan import ExtGnanParams, graph_repr, node_repr, node_reprs, xor_gadget_params
from .interpret import build_report, graph_contribution, node_contribution, set_contribution
from .mixer import GmanParams, gman_score, init_gman, predict_proba, subset_repr
from .training import TrainConfig, accuracy, auroc, fit, grid_search

__all__ = [
    "Dataset",
    "ExtGnanParams",
    "GmanParams",
    "PartitionSpec",
    "TrainConfig",
    "Trajectory",
    "TrajectorySet",
    "ValidationError",
    "accuracy",
    "auroc",
    "build_report",
    "fit",
    "gman_score",
    "graph_contribution",
    "graph_repr",
    "grid_search",
    "init_gman",
    "node_contribution",
    "node_repr",
    "node_reprs",
    "normalize",
    "predict_proba",
    "set_contribution",
    "subset_repr",
    "time_delta",
    "validate_partition",
    "xor_gadget_params",
]

__version__ = "0.1.0"

"""Skeleton action recognition with temporal-channel aggregation graph convolutions.

Everything runs on a small numpy reverse-mode autodiff core
(:mod:`tcagcn.autodiff`).  The scikit-learn style entry points are
:class:`TCAGCNClassifier`, :class:`SkeletonStreams` and
:class:`DynamicStreamFusion`.
"""

from .config import RunConfig
from .datasets import LabeledDataset, SyntheticSpec, load_dataset, make_synthetic, save_dataset
from .estimators import DynamicStreamFusion, SkeletonStreams, TCAGCNClassifier
from .fusion import FusionResult, ScoreMatrix, feasible_grid, fuse_accuracy, solve, solve_greedy, static_fuse
from .graph import SkeletonGraph, build_graph, load_graph, normalize_adjacency, spatial_partition
from .network import TCAGCN, ModelConfig, Schedule, channel_plan, derive_streams, predict_scores, train
from .tca import tca_forward
from .temporal import aff_fuse, msconv, tf_forward

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "LabeledDataset",
    "SyntheticSpec",
    "load_dataset",
    "make_synthetic",
    "save_dataset",
    "DynamicStreamFusion",
    "SkeletonStreams",
    "TCAGCNClassifier",
    "FusionResult",
    "ScoreMatrix",
    "feasible_grid",
    "fuse_accuracy",
    "solve",
    "solve_greedy",
    "static_fuse",
    "SkeletonGraph",
    "build_graph",
    "load_graph",
    "normalize_adjacency",
    "spatial_partition",
    "TCAGCN",
    "ModelConfig",
    "Schedule",
    "channel_plan",
    "derive_streams",
    "predict_scores",
    "train",
    "tca_forward",
    "aff_fuse",
    "msconv",
    "tf_forward",
]

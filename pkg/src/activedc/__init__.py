"""Active finetuning subset selection with distribution calibration."""

__version__ = "0.1.0"

from .baselines import select_k_center_greedy, select_k_means, select_random
from .calibration import (
    CalibrationConfig,
    ExtendedPool,
    calibrate_selection,
    run_activedc,
    tukey_transform,
)
from .clustering import ClusterModel, assign_pseudo_labels, kmeans
from .emd import emd
from .features import FeaturePool, LabelFile, l2_normalize, load_features, load_labels, save_features
from .selection import SelectionConfig, SelectionResult, match_selection, optimize, select_parametric

__all__ = [
    "CalibrationConfig",
    "ClusterModel",
    "ExtendedPool",
    "FeaturePool",
    "LabelFile",
    "SelectionConfig",
    "SelectionResult",
    "assign_pseudo_labels",
    "calibrate_selection",
    "emd",
    "kmeans",
    "l2_normalize",
    "load_features",
    "load_labels",
    "match_selection",
    "optimize",
    "run_activedc",
    "save_features",
    "select_k_center_greedy",
    "select_k_means",
    "select_parametric",
    "select_random",
    "tukey_transform",
]

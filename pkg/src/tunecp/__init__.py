"""Changepoint detection with post-detection inference that controls the family-wise error rate."""

__version__ = "1.0.0"

from .calibrate import ThresholdSpec, calibrate, compute_threshold
from .core import (
    ChangeModel,
    ChangepointSet,
    InferenceReport,
    InvalidInputError,
    ReportEntry,
    Series,
    WindowConfig,
    hausdorff,
    segment_null_test,
    true_null_set,
)
from .detect import DetectorSpec, detect
from .stats import StatisticSpec
from .tune import TuneConfig, fwer_event, tune_infer

__all__ = [
    "ChangeModel",
    "ChangepointSet",
    "DetectorSpec",
    "InferenceReport",
    "InvalidInputError",
    "ReportEntry",
    "Series",
    "StatisticSpec",
    "ThresholdSpec",
    "TuneConfig",
    "WindowConfig",
    "calibrate",
    "compute_threshold",
    "detect",
    "fwer_event",
    "hausdorff",
    "segment_null_test",
    "true_null_set",
    "tune_infer",
    "__version__",
]

"""Conformalized Monte Carlo dropout operator (CMCO).

A sequence-to-field DeepONet whose MC-dropout ensemble is calibrated with
split conformal prediction into per-location prediction intervals.
"""

from .conformal import (
    ConformalCalibration,
    EnsembleStats,
    IntervalReport,
    build_intervals,
    calibrate,
    conformal_quantile,
    empirical_coverage,
    evaluate_intervals,
    failure_rate,
    flag_outliers,
    mc_predict,
    mean_relative_error,
    nonconformity_scores,
)
from .deeponet import (
    REFERENCE_CONFIGS,
    BranchConfig,
    DeepONetModel,
    TrunkConfig,
    build_model,
    forward,
    parameter_count,
)
from .errors import (
    CMCOError,
    ConfigError,
    InfeasibleCalibrationError,
    NumericError,
    ProvenanceError,
    ShapeError,
)
from .tasks import Dataset, TaskSpec, generate, split_dataset
from .training import NormStats, TrainConfig, fit

__version__ = "0.1.0"

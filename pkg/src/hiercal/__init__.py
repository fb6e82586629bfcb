"""Split conformal calibration and jackknife+ for grouped (hierarchical) data."""
from .calibrators import (CalibratedPredictor, CalibrationInput, calibrate,
                          double_conformal_threshold, hcp2_threshold, hcp_threshold,
                          pooling_cdfs_threshold, repeated_subsampling_threshold,
                          split_conformal_threshold, subsampling_once_threshold)
from .core import (Group, GroupedDataset, WeightedDistribution, lower_quantile,
                   upper_quantile)
from .jackknife import (LooEnsemble, fit_loo, jackknife_plus_interval,
                        jackknife_plus_second_moment_interval)
from .scores import FittedScore, fit_score

__version__ = "0.1.0"

__all__ = [
    "CalibratedPredictor", "CalibrationInput", "FittedScore", "Group", "GroupedDataset",
    "LooEnsemble", "WeightedDistribution", "calibrate", "double_conformal_threshold",
    "fit_loo", "fit_score", "hcp2_threshold", "hcp_threshold", "jackknife_plus_interval",
    "jackknife_plus_second_moment_interval", "lower_quantile", "pooling_cdfs_threshold",
    "repeated_subsampling_threshold", "split_conformal_threshold",
    "subsampling_once_threshold", "upper_quantile",
]

"""Covariate-dependent mean residual life with a time-dependent transplant.

Kernel-smoothed hazard estimators per transplant group, an efficient
estimating equation for the index matrix, plug-in variances and a
simulation harness.
"""

from .domain import Dataset, DataError, GroupLabel, IndexMatrix, Subject, index_values, load_dataset, save_dataset
from .kernel import BandwidthConfig, Bandwidths, KernelKind, default_bandwidths
from .smoother import GroupSmoother, StepHazard, cum_hazard, hazard, mrl
from .estimator import (
    FitConfig,
    FitResult,
    NonConvergenceError,
    ScoreFunction,
    ScoreSmoothing,
    covariance_efficient,
    covariance_sandwich,
    efficient_score,
    general_score,
    improvement,
    mrl_variance,
    solve_beta,
)

__version__ = "0.1.0"

"""Recurrent-network approximation of Bayesian optimal filters on linear-Gaussian models."""

from rnnfilter.model import (
    LinearGaussianModel,
    TrajectoryBatch,
    check_stationarity_condition,
    sample_trajectories,
    scalar_model,
    spectral_radius,
)

__version__ = "0.1.0"

__all__ = [
    "LinearGaussianModel",
    "TrajectoryBatch",
    "check_stationarity_condition",
    "sample_trajectories",
    "scalar_model",
    "spectral_radius",
]

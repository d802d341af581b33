"""Exact Kalman filter for linear-Gaussian models.

This is the oracle every approximate filter is scored against.  The
recursion is written in the gain/one-step form

    K_t = P_t H^T (R + H P_t H^T)^{-1},    P_t = F C_{t-1} F^T + Q
    mean_t = (F - K_t H F) mean_{t-1} + K_t y_t
    C_t = (I - K_t H) P_t

with C_t symmetrized after every step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from rnnfilter.errors import DimensionError, NonConvergenceError, SingularityError
from rnnfilter.model import LinearGaussianModel

__all__ = [
    "KalmanState",
    "initial_state",
    "kalman_step",
    "kalman_filter",
    "kalman_gain_sequence",
    "kalman_means",
    "riccati_fixed_point",
    "steady_state_gain",
    "stacked_transition",
    "write_trace_csv",
]

MAX_INNOVATION_COND = 1e14


@dataclass(frozen=True, eq=False)
class KalmanState:
    """Conditional mean and covariance after ``t`` updates, with the gain used."""

    mean: np.ndarray
    cov: np.ndarray
    gain: np.ndarray
    t: int = 0


def initial_state(model: LinearGaussianModel) -> KalmanState:
    return KalmanState(
        mean=model.init_mean.copy(),
        cov=model.init_cov.copy(),
        gain=np.zeros((model.d_x, model.d_y)),
        t=0,
    )


def _predict_and_gain(model: LinearGaussianModel, cov: np.ndarray):
    f, h = model.f_matrix, model.h_matrix
    pred = f @ cov @ f.T + model.q_cov
    innov = model.r_cov + h @ pred @ h.T
    innov = (innov + innov.T) / 2
    if np.linalg.cond(innov) > MAX_INNOVATION_COND:
        raise SingularityError("innovation covariance is numerically singular")
    # K = P H^T S^-1, solved as S K^T = H P
    gain = cho_solve(cho_factor(innov), h @ pred).T
    new_cov = (np.eye(model.d_x) - gain @ h) @ pred
    new_cov = (new_cov + new_cov.T) / 2
    return gain, new_cov


def kalman_step(model: LinearGaussianModel, prev: KalmanState, y) -> KalmanState:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape != (model.d_y,) or prev.mean.shape != (model.d_x,):
        raise DimensionError(f"observation shape {y.shape} does not match d_y={model.d_y}")
    gain, cov = _predict_and_gain(model, prev.cov)
    f, h = model.f_matrix, model.h_matrix
    mean = (f - gain @ h @ f) @ prev.mean + gain @ y
    return KalmanState(mean=mean, cov=cov, gain=gain, t=prev.t + 1)


def kalman_filter(model: LinearGaussianModel, observations) -> list[KalmanState]:
    """Filter one observation sequence; the result includes the initial state."""
    states = [initial_state(model)]
    for y in np.asarray(observations, dtype=np.float64).reshape(-1, model.d_y):
        states.append(kalman_step(model, states[-1], y))
    return states


def kalman_gain_sequence(model: LinearGaussianModel, horizon: int,
                         init_cov=None) -> tuple[np.ndarray, np.ndarray]:
    """Gains K_1..K_T and covariances C_0..C_T.

    The covariance recursion does not see the observations, so one pass serves
    any number of trajectories.
    """
    cov = model.init_cov if init_cov is None else np.asarray(init_cov, dtype=np.float64)
    gains = np.empty((horizon, model.d_x, model.d_y))
    covs = np.empty((horizon + 1, model.d_x, model.d_x))
    covs[0] = cov
    for t in range(horizon):
        gains[t], covs[t + 1] = _predict_and_gain(model, covs[t])
    return gains, covs


def kalman_means(model: LinearGaussianModel, observations, init_mean=None) -> np.ndarray:
    """Filtered means for a batch of sequences.

    Parameters
    ----------
    observations : array, shape (N, T, d_y)
    init_mean : array, shape (d_x,) or (N, d_x), optional
        Overrides the model's initial mean (the covariance still starts at
        ``model.init_cov``).

    Returns
    -------
    means : array, shape (N, T, d_x)
        Means after each of the T updates; the initial mean is not included.
    """
    obs = np.asarray(observations, dtype=np.float64)
    n, horizon, _ = obs.shape
    gains, _ = kalman_gain_sequence(model, horizon)
    f, h = model.f_matrix, model.h_matrix
    mean = np.broadcast_to(model.init_mean if init_mean is None else init_mean,
                           (n, model.d_x)).astype(np.float64)
    out = np.empty((n, horizon, model.d_x))
    for t in range(horizon):
        k = gains[t]
        mean = mean @ (f - k @ h @ f).T + obs[:, t] @ k.T
        out[:, t] = mean
    return out


def riccati_fixed_point(model: LinearGaussianModel, tol: float = 1e-13,
                        max_iter: int = 10_000) -> np.ndarray:
    """Steady-state filtered covariance by iterating the covariance recursion."""
    cov = model.init_cov.copy()
    for _ in range(max_iter):
        _, new = _predict_and_gain(model, cov)
        if np.abs(new - cov).max() < tol:
            return new
        cov = new
    raise NonConvergenceError(
        f"covariance recursion did not converge in {max_iter} iterations", last_iterate=cov
    )


def steady_state_gain(model: LinearGaussianModel, tol: float = 1e-13,
                      max_iter: int = 10_000) -> np.ndarray:
    gain, _ = _predict_and_gain(model, riccati_fixed_point(model, tol, max_iter))
    return gain


def stacked_transition(model: LinearGaussianModel, gain) -> np.ndarray:
    """Transition [[F - KHF, KHF], [0, F]] of the joint (mean, state) system."""
    f, h = model.f_matrix, model.h_matrix
    gain = np.asarray(gain, dtype=np.float64).reshape(model.d_x, model.d_y)
    khf = gain @ h @ f
    d = model.d_x
    out = np.zeros((2 * d, 2 * d))
    out[:d, :d] = f - khf
    out[:d, d:] = khf
    out[d:, d:] = f
    return out


def write_trace_csv(states: list[KalmanState], path) -> None:
    """Columns: t, mean_i, cov_ij (row-major), gain_ij (row-major)."""
    d_x = states[0].mean.shape[0]
    d_y = states[0].gain.shape[1]
    header = (["t"] + [f"mean_{i + 1}" for i in range(d_x)]
              + [f"cov_{i + 1}_{j + 1}" for i in range(d_x) for j in range(d_x)]
              + [f"gain_{i + 1}_{j + 1}" for i in range(d_x) for j in range(d_y)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for s in states:
            vals = np.concatenate([s.mean, s.cov.ravel(), s.gain.ravel()])
            w.writerow([s.t] + [repr(float(v)) for v in vals])

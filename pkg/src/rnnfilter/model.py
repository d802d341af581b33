"""Linear-Gaussian state-space models and trajectory simulation.

The model is

    X_t = F X_{t-1} + V_t,    V_t ~ N(0, Q)
    Y_t = H X_t + W_t,        W_t ~ N(0, R)

with X_0 ~ N(init_mean, init_cov).  Trajectories are drawn with one
independent random stream per trajectory index, so a batch of N trajectories
is a prefix of any larger batch drawn with the same seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from rnnfilter.errors import DimensionError, InvalidModelError

__all__ = [
    "LinearGaussianModel",
    "TrajectoryBatch",
    "scalar_model",
    "gaussian_factor",
    "sample_trajectories",
    "spectral_radius",
    "check_stationarity_condition",
    "StationarityDiagnostic",
    "write_batch_csv",
    "read_batch_csv",
]

SYM_TOL = 1e-12
# eigenvalues in (-CLAMP_TOL, 0) are treated as round-off and clamped
CLAMP_TOL = 1e-10


def _as_matrix(a, name: str) -> np.ndarray:
    m = np.atleast_2d(np.array(a, dtype=np.float64))
    if m.ndim != 2:
        raise DimensionError(f"{name} must be a matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidModelError(f"{name} has non-finite entries")
    return m


def _check_psd(m: np.ndarray, name: str, strict: bool) -> None:
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"{name} must be square, got {m.shape}")
    if not np.allclose(m, m.T, rtol=0.0, atol=SYM_TOL * max(1.0, np.abs(m).max())):
        raise InvalidModelError(f"{name} is not symmetric")
    lo = np.linalg.eigvalsh(m).min()
    if strict and lo <= 0.0:
        raise InvalidModelError(f"{name} must be positive definite (min eigenvalue {lo:.3g})")
    if not strict and lo < -CLAMP_TOL:
        raise InvalidModelError(f"{name} must be positive semi-definite (min eigenvalue {lo:.3g})")


@dataclass(frozen=True, eq=False)
class LinearGaussianModel:
    """Linear-Gaussian signal and observation model.

    Parameters
    ----------
    f_matrix : array, shape (d_x, d_x)
        State transition matrix F.
    h_matrix : array, shape (d_y, d_x)
        Observation matrix H.
    q_cov : array, shape (d_x, d_x)
        Process noise covariance, symmetric PSD.
    r_cov : array, shape (d_y, d_y)
        Observation noise covariance, symmetric PD.
    init_mean : array, shape (d_x,)
    init_cov : array, shape (d_x, d_x)
        Law of X_0, covariance symmetric PSD.
    """

    f_matrix: np.ndarray
    h_matrix: np.ndarray
    q_cov: np.ndarray
    r_cov: np.ndarray
    init_mean: np.ndarray
    init_cov: np.ndarray

    def __post_init__(self):
        f = _as_matrix(self.f_matrix, "f_matrix")
        h = _as_matrix(self.h_matrix, "h_matrix")
        q = _as_matrix(self.q_cov, "q_cov")
        r = _as_matrix(self.r_cov, "r_cov")
        c0 = _as_matrix(self.init_cov, "init_cov")
        m0 = np.atleast_1d(np.array(self.init_mean, dtype=np.float64))
        d_x = f.shape[0]
        if f.shape != (d_x, d_x):
            raise DimensionError(f"f_matrix must be square, got {f.shape}")
        if h.shape[1] != d_x:
            raise DimensionError(f"h_matrix has {h.shape[1]} columns, expected d_x={d_x}")
        d_y = h.shape[0]
        for name, m, shape in (
            ("q_cov", q, (d_x, d_x)),
            ("r_cov", r, (d_y, d_y)),
            ("init_cov", c0, (d_x, d_x)),
        ):
            if m.shape != shape:
                raise DimensionError(f"{name} has shape {m.shape}, expected {shape}")
        if m0.shape != (d_x,):
            raise DimensionError(f"init_mean has shape {m0.shape}, expected ({d_x},)")
        if not np.all(np.isfinite(m0)):
            raise InvalidModelError("init_mean has non-finite entries")
        _check_psd(q, "q_cov", strict=False)
        _check_psd(c0, "init_cov", strict=False)
        _check_psd(r, "r_cov", strict=True)
        for name, value in (
            ("f_matrix", f),
            ("h_matrix", h),
            ("q_cov", q),
            ("r_cov", r),
            ("init_mean", m0),
            ("init_cov", c0),
        ):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def d_x(self) -> int:
        return self.f_matrix.shape[0]

    @property
    def d_y(self) -> int:
        return self.h_matrix.shape[0]


def scalar_model(alpha: float, beta: float, init_var: float = 25.0, init_mean: float = 0.0,
                 q: float = 1.0) -> LinearGaussianModel:
    """X_t = alpha X_{t-1} + V_t, Y_t = X_t + beta W_t with standard Gaussian noises."""
    return LinearGaussianModel(
        f_matrix=[[alpha]],
        h_matrix=[[1.0]],
        q_cov=[[q]],
        r_cov=[[beta**2]],
        init_mean=[init_mean],
        init_cov=[[init_var]],
    )


def gaussian_factor(cov: np.ndarray) -> np.ndarray:
    """Return A with A @ A.T == cov, for symmetric PSD (possibly singular) cov.

    Cholesky is tried first; singular matrices fall back to an
    eigendecomposition with round-off negative eigenvalues clamped to zero.
    """
    cov = np.asarray(cov, dtype=np.float64)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    w, v = np.linalg.eigh((cov + cov.T) / 2)
    if w.min() < -CLAMP_TOL:
        raise InvalidModelError(f"covariance is not PSD (min eigenvalue {w.min():.3g})")
    return v * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """Sampled trajectories, trajectory-major.

    ``states[n, t]`` is X_t for t = 0..T and ``observations[n, t-1]`` is Y_t
    for t = 1..T.
    """

    states: np.ndarray
    observations: np.ndarray
    seed: int

    def __post_init__(self):
        states = np.array(self.states, dtype=np.float64)
        obs = np.array(self.observations, dtype=np.float64)
        if states.ndim != 3 or obs.ndim != 3:
            raise DimensionError("states and observations must be 3-d [N][T][dim]")
        if states.shape[0] != obs.shape[0] or states.shape[1] != obs.shape[1] + 1:
            raise DimensionError(
                f"states {states.shape} and observations {obs.shape} disagree on N or T"
            )
        states.setflags(write=False)
        obs.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "observations", obs)

    @property
    def count(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.observations.shape[1]

    def subset(self, index) -> "TrajectoryBatch":
        return TrajectoryBatch(self.states[index], self.observations[index], self.seed)


def trajectory_streams(seed: int, count: int) -> list[np.random.Generator]:
    """One generator per trajectory index; stream n does not depend on count."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def sample_trajectories(model: LinearGaussianModel, horizon_T: int, count_N: int,
                        seed: int) -> TrajectoryBatch:
    """Draw ``count_N`` independent trajectories of length ``horizon_T``.

    Each trajectory consumes its own stream in a fixed order: X_0 noise, then
    the T process-noise vectors, then the T observation-noise vectors.
    """
    if horizon_T < 1 or count_N < 1:
        raise ValueError("horizon_T and count_N must be positive")
    d_x, d_y = model.d_x, model.d_y
    a0 = gaussian_factor(model.init_cov)
    aq = gaussian_factor(model.q_cov)
    ar = gaussian_factor(model.r_cov)

    z0 = np.empty((count_N, d_x))
    zv = np.empty((count_N, horizon_T, d_x))
    zw = np.empty((count_N, horizon_T, d_y))
    for n, rng in enumerate(trajectory_streams(seed, count_N)):
        z0[n] = rng.standard_normal(d_x)
        zv[n] = rng.standard_normal((horizon_T, d_x))
        zw[n] = rng.standard_normal((horizon_T, d_y))

    states = np.empty((count_N, horizon_T + 1, d_x))
    states[:, 0] = model.init_mean + z0 @ a0.T
    noise_v = zv @ aq.T
    for t in range(1, horizon_T + 1):
        states[:, t] = states[:, t - 1] @ model.f_matrix.T + noise_v[:, t - 1]
    observations = states[:, 1:] @ model.h_matrix.T + zw @ ar.T
    return TrajectoryBatch(states, observations, seed)


def spectral_radius(m) -> float:
    """Largest eigenvalue magnitude of a square matrix."""
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"spectral radius needs a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return float(np.abs(np.linalg.eigvals(m)).max())


@dataclass(frozen=True)
class StationarityDiagnostic:
    stationary: bool
    spectral_radius: float
    margin: float


def check_stationarity_condition(model: LinearGaussianModel,
                                 tol_margin: float = 0.0) -> StationarityDiagnostic:
    """Whether the signal is exponentially ergodic, i.e. rho(F) < 1 - tol_margin."""
    rho = spectral_radius(model.f_matrix)
    return StationarityDiagnostic(rho < 1.0 - tol_margin, rho, tol_margin)


def write_batch_csv(batch: TrajectoryBatch, path) -> None:
    """Write columns n, t, x_1..x_dx, y_1..y_dy; the t=0 rows leave y empty."""
    d_x = batch.states.shape[2]
    d_y = batch.observations.shape[2]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "t"] + [f"x_{i + 1}" for i in range(d_x)]
                   + [f"y_{i + 1}" for i in range(d_y)])
        for n in range(batch.count):
            for t in range(batch.horizon + 1):
                xs = [repr(float(v)) for v in batch.states[n, t]]
                ys = ([""] * d_y if t == 0
                      else [repr(float(v)) for v in batch.observations[n, t - 1]])
                w.writerow([n, t] + xs + ys)


def read_batch_csv(path, seed: int = 0) -> TrajectoryBatch:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    d_x = sum(1 for h in header if h.startswith("x_"))
    d_y = sum(1 for h in header if h.startswith("y_"))
    count = max(int(r[0]) for r in body) + 1
    horizon = max(int(r[1]) for r in body)
    states = np.empty((count, horizon + 1, d_x))
    obs = np.empty((count, horizon, d_y))
    for r in body:
        n, t = int(r[0]), int(r[1])
        states[n, t] = [float(v) for v in r[2:2 + d_x]]
        if t > 0:
            obs[n, t - 1] = [float(v) for v in r[2 + d_x:2 + d_x + d_y]]
    return TrajectoryBatch(states, obs, seed)

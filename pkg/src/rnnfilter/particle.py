"""Bootstrap particle filter with systematic resampling at every step.

Each filter run owns two random streams, one for propagation noise and one
for the resampling uniforms.  Draws are consumed in a fixed per-step order,
so the vectorized batch filter reproduces the single-ensemble path exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rnnfilter.errors import DegeneracyError, DimensionError
from rnnfilter.model import LinearGaussianModel, gaussian_factor

__all__ = [
    "ParticleEnsemble",
    "ParticleStreams",
    "particle_streams",
    "systematic_resample",
    "pf_init",
    "pf_step",
    "pf_estimate",
    "run_particle_filter",
    "particle_filter_batch",
]

MIN_TOTAL_WEIGHT = 1e-300
_LOG_MIN_TOTAL_WEIGHT = np.log(MIN_TOTAL_WEIGHT)


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    particles: np.ndarray
    weights: np.ndarray
    ess: float
    t: int = 0

    @property
    def count(self) -> int:
        return self.particles.shape[0]


@dataclass(frozen=True, eq=False)
class ParticleStreams:
    propagate: np.random.Generator
    resample: np.random.Generator


def particle_streams(seed) -> ParticleStreams:
    """Build the (propagate, resample) stream pair from an int or SeedSequence."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    prop, res = ss.spawn(2)
    return ParticleStreams(np.random.default_rng(prop), np.random.default_rng(res))


def systematic_resample(weights, u) -> np.ndarray:
    """Indices selected by systematic resampling.

    Position j = (u + j) / P selects the first particle whose cumulative weight
    reaches it.  Works on ``weights`` of shape (..., P) with ``u`` of shape
    (...); returned indices are per row, in ascending order.
    """
    w = np.asarray(weights, dtype=np.float64)
    p = w.shape[-1]
    rows = w.size // p
    u = np.asarray(u, dtype=np.float64).reshape(rows, 1)
    cum = np.cumsum(w.reshape(rows, p), axis=-1)
    cum[:, -1] = 1.0
    # number of positions at or below each cumulative weight
    reached = np.clip(np.floor(p * cum - u), -1, p - 1).astype(np.int64) + 1
    reached[:, -1] = p
    offset = p * np.arange(rows).reshape(rows, 1)
    # position j picks #{i : reached_i <= j}; counted on integer keys, so exact
    hits = np.bincount((reached + offset).ravel(), minlength=rows * p + 1)
    flat = np.cumsum(hits[:-1])
    return (flat.reshape(rows, p) - offset).reshape(w.shape)


class _Constants:
    def __init__(self, model: LinearGaussianModel):
        self.f = model.f_matrix
        self.h = model.h_matrix
        self.a0 = gaussian_factor(model.init_cov)
        self.aq = gaussian_factor(model.q_cov)
        lr = np.linalg.cholesky(model.r_cov)
        self.lr_inv = np.linalg.inv(lr)
        self.log_norm = -0.5 * model.d_y * np.log(2 * np.pi) - np.log(np.diag(lr)).sum()
        self.init_mean = model.init_mean
        self.d_x = model.d_x
        self.d_y = model.d_y


def _affine(x: np.ndarray, m: np.ndarray) -> np.ndarray:
    # x @ m.T on the trailing axis, through a single 2-d product
    return (x.reshape(-1, x.shape[-1]) @ m.T).reshape(x.shape[:-1] + (m.shape[0],))


def _log_likelihood(c: _Constants, y: np.ndarray, x: np.ndarray) -> np.ndarray:
    # y: (..., d_y), x: (..., P, d_x)
    e = _affine(y[..., None, :] - _affine(x, c.h), c.lr_inv)
    return c.log_norm - 0.5 * np.sum(e * e, axis=-1)


def _propagate(c: _Constants, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    return _affine(x, c.f) + _affine(z, c.aq)


def _normalize(logw: np.ndarray):
    m = logw.max(axis=-1, keepdims=True)
    e = np.exp(logw - m)
    total = np.sum(e, axis=-1, keepdims=True)
    return e / total, m[..., 0] + np.log(total[..., 0])


def _uniform_mean(x: np.ndarray) -> np.ndarray:
    # mean over the particle axis (-2), reduced along a contiguous last axis
    return np.ascontiguousarray(np.swapaxes(x, -1, -2)).sum(axis=-1) / x.shape[-2]


def pf_init(model: LinearGaussianModel, count_P: int, seed) -> ParticleEnsemble:
    """Draw ``count_P`` particles from the law of X_0 with uniform weights.

    ``seed`` is an int or a :class:`ParticleStreams`; pass the same streams to
    subsequent :func:`pf_step` calls to continue the run reproducibly.
    """
    if count_P < 1:
        raise ValueError("count_P must be >= 1")
    streams = seed if isinstance(seed, ParticleStreams) else particle_streams(seed)
    c = _Constants(model)
    z = streams.propagate.standard_normal((count_P, model.d_x))
    particles = c.init_mean + _affine(z, c.a0)
    return ParticleEnsemble(particles, np.full(count_P, 1.0 / count_P), float(count_P), 0)


def pf_step(model: LinearGaussianModel, ens: ParticleEnsemble, y,
            rng_stream: ParticleStreams, _consts: _Constants | None = None) -> ParticleEnsemble:
    """Propagate, weight by the observation likelihood, resample."""
    c = _consts or _Constants(model)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape != (model.d_y,):
        raise DimensionError(f"observation shape {y.shape} does not match d_y={model.d_y}")
    p = ens.count
    z = rng_stream.propagate.standard_normal((p, model.d_x))
    x = _propagate(c, ens.particles, z)
    with np.errstate(divide="ignore"):
        logw = np.log(ens.weights) + _log_likelihood(c, y, x)
    w, log_total = _normalize(logw)
    if not log_total > _LOG_MIN_TOTAL_WEIGHT:
        raise DegeneracyError(f"all particle weights vanished at t={ens.t + 1}", t=ens.t + 1)
    ess = 1.0 / np.sum(w * w)
    idx = systematic_resample(w, rng_stream.resample.random())
    return ParticleEnsemble(x[idx], np.full(p, 1.0 / p), float(ess), ens.t + 1)


def pf_estimate(ens: ParticleEnsemble) -> np.ndarray:
    """Weighted particle mean."""
    w = ens.weights
    if np.all(w == w[0]):
        return _uniform_mean(ens.particles)
    return w @ ens.particles


def run_particle_filter(model: LinearGaussianModel, observations, count_P: int,
                        seed) -> np.ndarray:
    """Mean estimates, shape (T, d_x), for one observation sequence."""
    obs = np.asarray(observations, dtype=np.float64).reshape(-1, model.d_y)
    streams = seed if isinstance(seed, ParticleStreams) else particle_streams(seed)
    c = _Constants(model)
    ens = pf_init(model, count_P, streams)
    out = np.empty((obs.shape[0], model.d_x))
    for t, y in enumerate(obs):
        ens = pf_step(model, ens, y, streams, c)
        out[t] = pf_estimate(ens)
    return out


def particle_filter_batch(model: LinearGaussianModel, observations, count_P: int, seed: int,
                          chunk: int = 16) -> np.ndarray:
    """Run independent filters on a batch of sequences, vectorized over the batch.

    Trajectory n uses the streams built from child n of ``SeedSequence(seed)``,
    so its estimates equal ``run_particle_filter(..., seed=child_n)``.
    Random draws are pulled ``chunk`` steps at a time to amortize call overhead.

    Returns
    -------
    estimates : array, shape (N, T, d_x)
    """
    obs = np.asarray(observations, dtype=np.float64)
    n, horizon, _ = obs.shape
    d_x, p = model.d_x, count_P
    c = _Constants(model)
    streams = [particle_streams(s) for s in np.random.SeedSequence(seed).spawn(n)]

    z0 = np.stack([s.propagate.standard_normal((p, d_x)) for s in streams])
    x = c.init_mean + _affine(z0, c.a0)
    out = np.empty((n, horizon, d_x))
    rows = np.arange(n)
    for t0 in range(0, horizon, chunk):
        steps = min(chunk, horizon - t0)
        zs = np.stack([s.propagate.standard_normal((steps, p, d_x)) for s in streams])
        us = np.stack([s.resample.random(steps) for s in streams])
        for k in range(steps):
            t = t0 + k
            x = _propagate(c, x, zs[:, k])
            w, log_total = _normalize(_log_likelihood(c, obs[:, t], x))
            bad = ~(log_total > _LOG_MIN_TOTAL_WEIGHT)
            if bad.any():
                which = int(rows[bad][0])
                raise DegeneracyError(
                    f"all particle weights vanished at t={t + 1} on trajectory {which}",
                    t=t + 1, trajectory=which,
                )
            idx = systematic_resample(w, us[:, k])
            x = np.take_along_axis(x, idx[..., None], axis=1)
            out[:, t] = _uniform_mean(x)
    return out

"""Empirical mean-square loss, backpropagation through time, and the trainer."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from rnnfilter.errors import NumericError, TrainingDivergedError
from rnnfilter.model import TrajectoryBatch
from rnnfilter.rnn import RnnParams, RnnTopology, init_random_params, unroll_batch

__all__ = [
    "TrainConfig",
    "GradientBundle",
    "empirical_loss",
    "grad_bptt",
    "finite_diff_grad",
    "train",
    "write_loss_csv",
]

log = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e6


@dataclass(frozen=True)
class TrainConfig:
    horizon_T_train: int = 20
    count_N_train: int = 5000
    epochs: int = 100
    minibatch_size: int = 100
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip_norm: float | None = 5.0
    train_s0: bool = True
    seed: int = 0

    def __post_init__(self):
        if min(self.horizon_T_train, self.count_N_train, self.epochs, self.minibatch_size) < 1:
            raise ValueError("horizon, count, epochs and minibatch size must be positive")
        if self.minibatch_size > self.count_N_train:
            raise ValueError("minibatch_size cannot exceed count_N_train")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.grad_clip_norm is not None and self.grad_clip_norm <= 0:
            raise ValueError("grad_clip_norm must be positive or None")


@dataclass(eq=False)
class GradientBundle:
    grads: RnnParams
    loss: float

    def flat(self) -> np.ndarray:
        return self.grads.flat()


def _targets(batch: TrajectoryBatch, target_fn) -> np.ndarray:
    states = batch.states[:, 1:]
    return states if target_fn is None else np.asarray(target_fn(states), dtype=np.float64)


def _check_finite(values: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        n, t = np.argwhere(bad)[0][:2]
        raise NumericError(f"non-finite {what} at trajectory n={n}, t={t + 1}")


def empirical_loss(params: RnnParams, topology: RnnTopology, batch: TrajectoryBatch,
                   target_fn=None) -> float:
    """(1 / (N T)) sum_n sum_t ||network output - target(X_t)||^2."""
    outputs, _ = unroll_batch(params, topology, batch.observations)
    diff = outputs - _targets(batch, target_fn)
    _check_finite(diff, "loss term")
    n, horizon = diff.shape[:2]
    return float(np.sum(diff * diff) / (n * horizon))


def _loss_and_grad(params: RnnParams, topology: RnnTopology, obs: np.ndarray,
                   targets: np.ndarray) -> GradientBundle:
    outputs, _, (acts_t, pres_t) = unroll_batch(params, topology, obs, keep=True)
    b, horizon = obs.shape[:2]
    scale = 1.0 / (b * horizon)
    diff = outputs - targets
    loss = float(np.sum(diff * diff) * scale)
    dout = 2.0 * scale * diff

    num = topology.num_layers
    widths = topology.layer_widths
    ff, fb = params.feedforward, params.feedback
    g_ff = [np.zeros_like(w) for w in ff]
    g_b = [np.zeros_like(v) for v in params.biases]
    g_fb = {key: np.zeros_like(m) for key, m in fb.items()}
    into = {}
    for (l, k), m in fb.items():
        into.setdefault(l, []).append((k, m))
    s0 = {k: np.broadcast_to(params.init_hidden[k], (b, widths[k]))
          for k in topology.fed_back_layers}

    carry = {k: np.zeros((b, widths[k])) for k in topology.fed_back_layers}
    for t in range(horizon - 1, -1, -1):
        acts, pres = acts_t[t], pres_t[t]
        prev = s0 if t == 0 else acts_t[t - 1]
        g = dout[:, t]
        g_ff[num - 1] += g.T @ acts[num - 1]
        g_b[num - 1] += g.sum(axis=0)
        ds = g @ ff[num - 1]
        new_carry = {k: np.zeros((b, widths[k])) for k in carry}
        for l in range(num - 1, 0, -1):
            if l in carry:
                ds = ds + carry[l]
            # relu'(0) := 0
            dz = ds * (pres[l] > 0)
            g_ff[l - 1] += dz.T @ acts[l - 1]
            g_b[l - 1] += dz.sum(axis=0)
            for k, m in into.get(l, ()):
                g_fb[(l, k)] += dz.T @ prev[k]
                new_carry[k] += dz @ m
            if l > 1:
                ds = dz @ ff[l - 1]
        carry = new_carry

    grads = RnnParams(g_ff, g_fb, g_b, {k: carry[k].sum(axis=0) for k in carry})
    return GradientBundle(grads, loss)


def grad_bptt(params: RnnParams, topology: RnnTopology, batch: TrajectoryBatch,
              target_fn=None) -> GradientBundle:
    """Exact gradient of :func:`empirical_loss` by full backpropagation through time."""
    out = _loss_and_grad(params, topology, batch.observations, _targets(batch, target_fn))
    if not np.isfinite(out.loss):
        raise NumericError("non-finite loss")
    if not np.all(np.isfinite(out.flat())):
        raise NumericError("non-finite gradient")
    return out


def finite_diff_grad(params: RnnParams, topology: RnnTopology, batch: TrajectoryBatch,
                     target_fn=None, h: float = 1e-5) -> GradientBundle:
    """Central-difference gradient, one coordinate at a time."""
    if h <= 0:
        raise ValueError("h must be positive")
    theta = params.flat()
    grad = np.empty_like(theta)
    for i in range(theta.size):
        step = np.zeros_like(theta)
        step[i] = h
        up = empirical_loss(params.with_flat(theta + step), topology, batch, target_fn)
        down = empirical_loss(params.with_flat(theta - step), topology, batch, target_fn)
        grad[i] = (up - down) / (2 * h)
    return GradientBundle(params.with_flat(grad),
                          empirical_loss(params, topology, batch, target_fn))


class _Adam:
    def __init__(self, size, lr, beta1, beta2, eps):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.k = 0
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps

    def step(self, theta, grad):
        self.k += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.k)
        v_hat = self.v / (1 - self.beta2**self.k)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class _Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, theta, grad):
        return theta - self.lr * grad


def train(config: TrainConfig, topology: RnnTopology, data: TrajectoryBatch, target_fn=None,
          init_params: RnnParams | None = None, progress=None):
    """Minibatch gradient descent on the empirical loss.

    Parameters are initialized from ``config.seed`` unless ``init_params`` is
    given; minibatch order is drawn from an independent child stream of the
    same seed.  ``progress``, if given, is called as ``progress(epoch, loss)``.

    Returns
    -------
    params : RnnParams
    loss_history : list of float
        Full-batch loss after each epoch.
    """
    if data.count < config.minibatch_size:
        raise ValueError("data has fewer trajectories than the minibatch size")
    init_ss, order_ss = np.random.SeedSequence(config.seed).spawn(2)
    params = (init_params.copy() if init_params is not None
              else init_random_params(topology, np.random.default_rng(init_ss).integers(2**63)))
    params.check(topology)
    order_rng = np.random.default_rng(order_ss)

    targets = _targets(data, target_fn)
    obs = data.observations
    theta = params.flat()
    # mask zeroing the initial-hidden-state block when it is frozen
    mask = np.ones_like(theta)
    if not config.train_s0:
        s0_size = sum(v.size for v in params.init_hidden.values())
        if s0_size:
            mask[-s0_size:] = 0.0
    if config.optimizer == "adam":
        opt = _Adam(theta.size, config.learning_rate, config.adam_beta1, config.adam_beta2,
                    config.adam_eps)
    else:
        opt = _Sgd(config.learning_rate)

    initial = empirical_loss(params, topology, data, target_fn)
    history = []
    count, size = data.count, config.minibatch_size
    for epoch in range(config.epochs):
        perm = order_rng.permutation(count)
        for start in range(0, count - size + 1, size):
            idx = perm[start:start + size]
            bundle = _loss_and_grad(params, topology, obs[idx], targets[idx])
            grad = bundle.flat() * mask
            if not np.all(np.isfinite(grad)):
                raise TrainingDivergedError(f"non-finite gradient in epoch {epoch}", epoch=epoch)
            if config.grad_clip_norm is not None:
                norm = np.sqrt(grad @ grad)
                if norm > config.grad_clip_norm:
                    grad = grad * (config.grad_clip_norm / norm)
            theta = opt.step(theta, grad)
            params = params.with_flat(theta)
        try:
            loss = empirical_loss(params, topology, data, target_fn)
        except NumericError:
            loss = math.inf
        if not np.isfinite(loss) or loss > DIVERGENCE_FACTOR * max(initial, 1e-300):
            raise TrainingDivergedError(f"training diverged in epoch {epoch}", epoch=epoch)
        history.append(loss)
        if progress is not None:
            progress(epoch, loss)
        log.debug("epoch %d loss %.6g", epoch, loss)
    return params, history


def write_loss_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "full_batch_loss"])
        for epoch, loss in enumerate(history):
            w.writerow([epoch, repr(float(loss))])

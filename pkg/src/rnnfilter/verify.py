"""Fast oracle battery behind ``rnnfilter verify``.

Each check compares an implementation path with an independent oracle and
returns a :class:`CheckResult`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from rnnfilter.kalman import kalman_filter, riccati_fixed_point
from rnnfilter.model import sample_trajectories, scalar_model
from rnnfilter.particle import systematic_resample
from rnnfilter.rnn import (
    RnnTopology,
    Variant,
    construct_memorization_params,
    init_random_params,
    memorization_readout,
    unroll_batch,
)
from rnnfilter.train import finite_diff_grad, grad_bptt

__all__ = [
    "CheckResult",
    "kink_margin",
    "kink_free_instance",
    "check_gradient",
    "check_riccati",
    "check_memorization",
    "check_resampling",
    "run_checks",
]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def kink_margin(params, topology, batch) -> float:
    """Smallest |pre-activation| over all hidden units, steps and trajectories."""
    _, _, (_, pres_t) = unroll_batch(params, topology, batch.observations, keep=True)
    return min(float(np.abs(z).min()) for pres in pres_t for z in pres[1:])


def kink_free_instance(widths=(1, 7, 7, 1), horizon: int = 5, count: int = 2, seed: int = 0,
                       margin: float = 1e-3, variant=Variant.RECURSIVE):
    """A random (params, topology, batch) whose pre-activations stay >= margin from 0.

    Candidates are drawn from successive seeds until one qualifies, so finite
    differences with small h never straddle a ReLU kink.
    """
    topology = RnnTopology(variant, widths)
    model = scalar_model(0.98, 2.0)
    for attempt in range(1000):
        ss = np.random.SeedSequence([seed, attempt])
        init_seed, data_seed, s0_seed = ss.generate_state(3)
        params = init_random_params(topology, int(init_seed))
        rng = np.random.default_rng(s0_seed)
        params.biases = [b + rng.uniform(-0.5, 0.5, b.shape) for b in params.biases]
        params.init_hidden = {k: rng.uniform(0.0, 1.0, v.shape)
                              for k, v in params.init_hidden.items()}
        batch = sample_trajectories(model, horizon, count, int(data_seed))
        if kink_margin(params, topology, batch) >= margin:
            return params, topology, batch
    raise RuntimeError("no kink-free instance found")


def check_gradient(tol: float = 1e-5, h: float = 1e-5, corrupt: bool = False) -> CheckResult:
    params, topology, batch = kink_free_instance()
    bptt = grad_bptt(params, topology, batch).flat()
    if corrupt:
        bptt = bptt.copy()
        bptt[len(bptt) // 2] += 1e-2 * max(1.0, abs(bptt[len(bptt) // 2]))
    fd = finite_diff_grad(params, topology, batch, h=h).flat()
    err = float(np.max(np.abs(bptt - fd) / np.maximum(1.0, np.abs(fd))))
    return CheckResult("gradient", err <= tol,
                       f"max relative error {err:.2e} over {fd.size} parameters (tol {tol:g})")


def check_riccati(tol: float = 1e-10) -> CheckResult:
    alpha, q, r = 0.98, 1.0, 4.0
    model = scalar_model(alpha, math.sqrt(r), q=q)
    # alpha^2 C^2 + (q + r - r alpha^2) C - r q = 0, positive root
    a, b, c = alpha**2, q + r - r * alpha**2, -r * q
    root = (-b + math.sqrt(b * b - 4 * a * c)) / (2 * a)
    fixed = float(riccati_fixed_point(model)[0, 0])

    obs = sample_trajectories(model, 100, 1, 0).observations[0]
    covs = [s.cov[0, 0] for s in kalman_filter(model, obs)]
    cov, worst = 25.0, 0.0
    for t in range(1, 101):
        pred = alpha**2 * cov + q
        cov = (1 - pred / (pred + r)) * pred
        worst = max(worst, abs(cov - covs[t]))
    ok = abs(fixed - root) <= tol and worst <= 1e-12
    return CheckResult("riccati", ok,
                       f"|C_inf - root| = {abs(fixed - root):.2e}, "
                       f"max |C_t - scalar recursion| = {worst:.2e}")


def check_memorization(trials: int = 100, horizon: int = 20, bias_b: float = 50.0,
                       seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(trials):
        d_y = 1 + trial % 3
        params, topology = construct_memorization_params(horizon, d_y, 1, bias_b)
        ys = rng.standard_normal((1, horizon, d_y))
        _, _, (acts_t, _) = unroll_batch(params, topology, ys, keep=True)
        for t in range(1, horizon + 1):
            want = np.zeros(2 + horizon * d_y)
            want[0] = t
            want[2:2 + t * d_y] = ys[0, t - 1::-1].ravel()
            got = memorization_readout(acts_t[t - 1][1][0], bias_b)
            worst = max(worst, float(np.abs(got - want).max()))
    tol = 4 * np.finfo(float).eps * bias_b
    return CheckResult("memorization", worst <= tol,
                       f"max deviation {worst:.2e} over {trials} sequences (tol {tol:.1e})")


def check_resampling(draws: int = 10_000, count: int = 50, seed: int = 0,
                     tol: float = 0.02) -> CheckResult:
    rng = np.random.default_rng(seed)
    # P * w_i near 1 keeps the Monte-Carlo error of each mean copy count ~0.5%
    w = rng.uniform(0.8, 1.2, count)
    w /= w.sum()
    idx = systematic_resample(np.broadcast_to(w, (draws, count)), rng.random(draws))
    copies = np.bincount(idx.ravel(), minlength=count) / draws
    err = float(np.max(np.abs(copies - count * w) / (count * w)))
    return CheckResult("resampling", err <= tol,
                       f"max relative copy-count error {err:.2e} over {draws} draws")


def run_checks(corrupt_gradient: bool = False) -> list[CheckResult]:
    return [
        check_gradient(corrupt=corrupt_gradient),
        check_riccati(),
        check_memorization(),
        check_resampling(),
    ]

"""Scoring approximate filters against the Kalman oracle.

A *filter closure* maps a batch of observation sequences, shape (N, T, d_y),
to mean estimates of shape (N, T, d_x).  Closures used for contraction
probing also accept an initial-state offset as a second argument.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from rnnfilter.errors import ContractViolationError
from rnnfilter.kalman import kalman_means, steady_state_gain
from rnnfilter.model import LinearGaussianModel, sample_trajectories
from rnnfilter.particle import particle_filter_batch
from rnnfilter.rnn import RnnParams, RnnTopology, unroll_batch

__all__ = [
    "EvalReport",
    "AccumulationResult",
    "ContractionEstimate",
    "evaluate_filters",
    "window_mean",
    "detect_error_accumulation",
    "onset_time",
    "estimate_contraction",
    "kalman_closure",
    "rnn_closure",
    "particle_closure",
    "constant_closure",
    "write_report_csv",
    "write_contraction_csv",
]

OVERFLOW = "overflow"


@dataclass(eq=False)
class EvalReport:
    """Per-time-step RMSE curves, t = 1..T_test, for each method.

    A curve whose estimates turned non-finite stops just before the first bad
    step; ``overflow_t[method]`` records that step (None when the whole
    horizon is finite).
    """

    methods: list
    rmse_vs_oracle: dict
    rmse_vs_truth: dict
    overflow_t: dict
    n_test: int
    horizon: int
    seed: int
    config_echo: dict = field(default_factory=dict)


def _rmse_curve(est: np.ndarray, ref: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        sq = np.sum((est - ref) ** 2, axis=-1)
        return np.sqrt(np.mean(sq, axis=0))


def evaluate_filters(model: LinearGaussianModel, methods: dict, n_test: int,
                     horizon_T_test: int, seed: int, kalman_oracle=None,
                     config_echo: dict | None = None) -> EvalReport:
    """Run every method on the same fresh test trajectories.

    Parameters
    ----------
    methods : dict
        Method name -> filter closure.
    kalman_oracle : callable, optional
        ``oracle(observations) -> means``; defaults to the exact Kalman filter.
    """
    test = sample_trajectories(model, horizon_T_test, n_test, seed)
    obs = test.observations
    truth = test.states[:, 1:]
    oracle = kalman_means(model, obs) if kalman_oracle is None else kalman_oracle(obs)

    names = list(methods)
    vs_oracle, vs_truth, overflow = {}, {}, {}
    for name in names:
        est = np.asarray(methods[name](obs), dtype=np.float64)
        if est.shape != truth.shape:
            raise ContractViolationError(
                f"method {name!r} returned shape {est.shape}, expected {truth.shape}"
            )
        r_oracle = _rmse_curve(est, oracle)
        r_truth = _rmse_curve(est, truth)
        bad = ~(np.isfinite(r_oracle) & np.isfinite(r_truth))
        first = int(np.argmax(bad)) if bad.any() else None
        overflow[name] = None if first is None else first + 1
        stop = horizon_T_test if first is None else first
        vs_oracle[name] = r_oracle[:stop]
        vs_truth[name] = r_truth[:stop]
    return EvalReport(names, vs_oracle, vs_truth, overflow, n_test, horizon_T_test, seed,
                      dict(config_echo or {}))


def window_mean(curve: np.ndarray, window) -> float:
    """Mean of ``curve`` over time steps t = a..b inclusive (t is 1-based).

    Steps past the end of a truncated curve count as overflow (inf).
    """
    a, b = int(window[0]), int(window[1])
    if a < 1 or b < a:
        raise ValueError(f"empty or invalid window {window}")
    if b > len(curve):
        return math.inf
    return float(np.mean(curve[a - 1:b]))


@dataclass(frozen=True)
class AccumulationResult:
    flagged: bool
    ratio: float
    early_mean: float
    late_mean: float


def detect_error_accumulation(report: EvalReport, method: str, early_window=(100, 300),
                              late_window=(1800, 2000), threshold: float = 2.0,
                              against: str = "oracle") -> AccumulationResult:
    """Flag growth of the error curve: late-window mean / early-window mean > threshold."""
    if early_window[1] >= late_window[0] and late_window[1] >= early_window[0]:
        raise ValueError("windows overlap")
    if max(early_window[1], late_window[1]) > report.horizon:
        raise ValueError("window extends past the evaluation horizon")
    curve = (report.rmse_vs_oracle if against == "oracle" else report.rmse_vs_truth)[method]
    early = window_mean(curve, early_window)
    late = window_mean(curve, late_window)
    ratio = late / early if early > 0 else (math.inf if late > 0 else 1.0)
    return AccumulationResult(bool(ratio > threshold), float(ratio), early, late)


def onset_time(curve: np.ndarray, reference_t: int = 100, factor: float = 3.0) -> float:
    """First t > reference_t at which the curve exceeds factor x its value at reference_t.

    Returns inf when it never does (a truncated curve crosses at its overflow step).
    """
    level = factor * curve[reference_t - 1]
    above = np.nonzero(curve[reference_t:] > level)[0]
    if above.size:
        return float(reference_t + 1 + above[0])
    return math.inf


@dataclass(eq=False)
class ContractionEstimate:
    """Exponential fit r_t ~ c * kappa**t of the root-mean-square filter difference.

    ``lag_curve[t]`` is the RMS difference at lag t (``lag_curve[0]`` is the
    size of the initial perturbation).  When the difference collapses below
    round-off before two fit points are available, ``upper_bound`` is set and
    ``kappa_hat`` is only an upper bound.
    """

    kappa_hat: float
    c_hat: float
    per_lag_ratios: np.ndarray
    fit_residual: float
    lag_curve: np.ndarray
    upper_bound: bool = False


def estimate_contraction(filter_closure, model: LinearGaussianModel, n_pairs: int,
                         init_offsets, horizon: int, seed: int,
                         burn_in: int = 5) -> ContractionEstimate:
    """Probe how fast a filter forgets its initial state.

    For each of ``n_pairs`` sampled observation sequences and each offset, the
    filter is run from its nominal initial state and from the offset one; the
    RMS of the output difference is fitted in log space over lags > burn_in.
    """
    offsets = [np.atleast_1d(np.asarray(o, dtype=np.float64)) for o in init_offsets]
    if not offsets:
        raise ValueError("at least one initial offset is required")
    obs = sample_trajectories(model, horizon, n_pairs, seed).observations
    base = np.asarray(filter_closure(obs, None), dtype=np.float64)
    sq = np.zeros(horizon)
    for off in offsets:
        pert = np.asarray(filter_closure(obs, off), dtype=np.float64)
        sq += np.sum((pert - base) ** 2, axis=-1).sum(axis=0)
    curve = np.sqrt(sq / (n_pairs * len(offsets)))
    r0 = math.sqrt(np.mean([o @ o for o in offsets]))
    lag_curve = np.concatenate([[r0], curve])

    scale = max(1.0, float(np.sqrt(np.mean(np.sum(base * base, axis=-1)))))
    floor = 1e3 * np.finfo(float).eps * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = lag_curve[1:] / lag_curve[:-1]
    ratios = ratios[np.isfinite(ratios) & (ratios > 0)]

    lags = np.arange(horizon + 1)
    valid = (lags > burn_in) & (lag_curve > floor)
    # stop at the first lag lost in round-off
    below = np.nonzero((lags > burn_in) & (lag_curve <= floor))[0]
    if below.size:
        valid &= lags < below[0]
    if valid.sum() >= 2:
        slope, intercept = np.polyfit(lags[valid], np.log(lag_curve[valid]), 1)
        resid = np.log(lag_curve[valid]) - (intercept + slope * lags[valid])
        return ContractionEstimate(float(np.exp(slope)), float(np.exp(intercept)), ratios,
                                   float(np.sqrt(np.mean(resid**2))), lag_curve, False)

    # collapsed early: bound kappa from the last resolvable point
    t_zero = int(np.nonzero(lag_curve <= floor)[0][0]) if (lag_curve <= floor).any() else horizon
    ref_candidates = np.nonzero((lags < t_zero) & (lag_curve > floor))[0]
    t_ref = int(ref_candidates[-1]) if ref_candidates.size else 0
    r_ref = max(float(lag_curve[t_ref]), floor)
    kappa = (floor / r_ref) ** (1.0 / max(t_zero - t_ref, 1))
    return ContractionEstimate(float(kappa), r_ref, ratios, 0.0, lag_curve, True)


def kalman_closure(model: LinearGaussianModel, steady_state: bool = False):
    """Kalman mean recursion; the offset perturbs the initial mean."""
    f, h = model.f_matrix, model.h_matrix
    k_inf = steady_state_gain(model) if steady_state else None

    def run(obs, offset=None):
        m0 = model.init_mean if offset is None else model.init_mean + offset
        if not steady_state:
            return kalman_means(model, obs, init_mean=m0)
        n, horizon, _ = obs.shape
        a = f - k_inf @ h @ f
        mean = np.broadcast_to(m0, (n, model.d_x)).astype(np.float64)
        out = np.empty((n, horizon, model.d_x))
        for t in range(horizon):
            mean = mean @ a.T + obs[:, t] @ k_inf.T
            out[:, t] = mean
        return out

    return run


def rnn_closure(params: RnnParams, topology: RnnTopology):
    """Network unroll; the offset perturbs the stacked initial hidden state."""
    layers = topology.fed_back_layers

    def run(obs, offset=None):
        if offset is None:
            s0 = None
        else:
            s0, pos = {}, 0
            for k in layers:
                width = topology.layer_widths[k]
                s0[k] = params.init_hidden[k] + offset[pos:pos + width]
                pos += width
            if pos != offset.size:
                raise ValueError(f"offset has {offset.size} entries, hidden state has {pos}")
        with np.errstate(over="ignore", invalid="ignore"):
            out, _ = unroll_batch(params, topology, obs, s0)
        return out

    return run


def particle_closure(model: LinearGaussianModel, count_P: int, seed: int):
    def run(obs):
        return particle_filter_batch(model, obs, count_P, seed)

    return run


def constant_closure(value, d_x: int):
    value = np.broadcast_to(np.asarray(value, dtype=np.float64), (d_x,))

    def run(obs, offset=None):
        return np.broadcast_to(value, obs.shape[:2] + (d_x,)).copy()

    return run


def _fmt(x: float) -> str:
    return repr(float(x))


def write_report_csv(report: EvalReport, path) -> None:
    """Columns: method, t, rmse_vs_oracle, rmse_vs_truth, n_effective."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "t", "rmse_vs_oracle", "rmse_vs_truth", "n_effective"])
        for name in report.methods:
            ro, rt = report.rmse_vs_oracle[name], report.rmse_vs_truth[name]
            for t in range(len(ro)):
                w.writerow([name, t + 1, _fmt(ro[t]), _fmt(rt[t]), report.n_test])
            if report.overflow_t[name] is not None:
                w.writerow([name, report.overflow_t[name], OVERFLOW, OVERFLOW, 0])


def write_contraction_csv(estimate: ContractionEstimate, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lag", "mean_sq_diff_root"])
        for lag, r in enumerate(estimate.lag_curve):
            w.writerow([lag, _fmt(r)])

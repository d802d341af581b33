import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.linalg import solve_discrete_are

from rnnfilter.errors import DimensionError, NonConvergenceError, SingularityError
from rnnfilter.kalman import (
    initial_state,
    kalman_filter,
    kalman_gain_sequence,
    kalman_means,
    kalman_step,
    riccati_fixed_point,
    stacked_transition,
    steady_state_gain,
    write_trace_csv,
)
from rnnfilter.model import LinearGaussianModel, sample_trajectories


def joint_gaussian_posterior(model, ys):
    """Condition X_T on Y_1..Y_T by building the full joint covariance.

    Independent of the recursion: X_t = F^t X_0 + sum_s F^(t-s) V_s.
    """
    f, h = model.f_matrix, model.h_matrix
    d, horizon = model.d_x, len(ys)
    # linear map from (X_0, V_1..V_T) to X_t
    blocks = []
    for t in range(horizon + 1):
        row = [np.linalg.matrix_power(f, t)]
        for s in range(1, horizon + 1):
            row.append(np.linalg.matrix_power(f, t - s) if s <= t else np.zeros((d, d)))
        blocks.append(np.hstack(row))
    noise_cov = np.zeros(((horizon + 1) * d, (horizon + 1) * d))
    noise_cov[:d, :d] = model.init_cov
    for s in range(1, horizon + 1):
        noise_cov[s * d:(s + 1) * d, s * d:(s + 1) * d] = model.q_cov
    mean0 = np.concatenate([model.init_mean] + [np.zeros(d)] * horizon)
    x_map = [b for b in blocks]
    x_mean = [b @ mean0 for b in blocks]
    y_map = np.vstack([h @ x_map[t] for t in range(1, horizon + 1)])
    y_mean = np.concatenate([h @ x_mean[t] for t in range(1, horizon + 1)])
    r_big = np.kron(np.eye(horizon), model.r_cov)
    s_yy = y_map @ noise_cov @ y_map.T + r_big
    s_xy = x_map[horizon] @ noise_cov @ y_map.T
    s_xx = x_map[horizon] @ noise_cov @ x_map[horizon].T
    gain = np.linalg.solve(s_yy, s_xy.T).T
    mean = x_mean[horizon] + gain @ (np.concatenate(ys) - y_mean)
    cov = s_xx - gain @ s_xy.T
    return mean, cov


def test_scalar_riccati_recursion(scalar_a098_b2):
    obs = sample_trajectories(scalar_a098_b2, 100, 1, seed=0).observations[0]
    states = kalman_filter(scalar_a098_b2, obs)
    cov = 25.0
    for t in range(1, 101):
        pred = 0.98**2 * cov + 1.0
        cov = pred * 4.0 / (pred + 4.0)
        assert abs(states[t].cov[0, 0] - cov) <= 1e-12


def test_scalar_steady_state_matches_quadratic_root(scalar_a098_b2):
    a, q, r = 0.98, 1.0, 4.0
    # a^2 C^2 + (q + r - r a^2) C - r q = 0
    b = q + r - r * a * a
    root = (-b + math.sqrt(b * b + 4 * a * a * r * q)) / (2 * a * a)
    assert abs(riccati_fixed_point(scalar_a098_b2)[0, 0] - root) <= 1e-10
    pred = a * a * root + q
    assert_allclose(steady_state_gain(scalar_a098_b2)[0, 0], pred / (pred + r), rtol=1e-12)


def test_scalar_known_values(scalar_a098_b2):
    assert_allclose(riccati_fixed_point(scalar_a098_b2)[0, 0], 1.52498, atol=1e-5)
    assert_allclose(steady_state_gain(scalar_a098_b2)[0, 0], 0.381244, atol=1e-6)


@pytest.mark.parametrize("horizon", [1, 3, 6])
def test_matches_joint_gaussian_conditioning(model_2d, horizon):
    obs = sample_trajectories(model_2d, horizon, 1, seed=horizon).observations[0]
    final = kalman_filter(model_2d, obs)[-1]
    mean, cov = joint_gaussian_posterior(model_2d, list(obs))
    assert_allclose(final.mean, mean, rtol=1e-10, atol=1e-10)
    assert_allclose(final.cov, cov, rtol=1e-10, atol=1e-10)


def test_steady_state_matches_scipy_dare(model_2d):
    f, h, q, r = model_2d.f_matrix, model_2d.h_matrix, model_2d.q_cov, model_2d.r_cov
    pred = solve_discrete_are(f.T, h.T, q, r)
    s = h @ pred @ h.T + r
    filtered = pred - pred @ h.T @ np.linalg.solve(s, h @ pred)
    assert_allclose(riccati_fixed_point(model_2d), filtered, rtol=1e-10, atol=1e-12)
    assert_allclose(steady_state_gain(model_2d), pred @ h.T @ np.linalg.inv(s), rtol=1e-9)


def test_covariances_symmetric_psd(model_2d):
    _, covs = kalman_gain_sequence(model_2d, 50)
    for c in covs:
        assert_allclose(c, c.T, atol=0)
        assert np.linalg.eigvalsh(c).min() > 0


def test_kalman_means_batch_equals_single(model_2d):
    batch = sample_trajectories(model_2d, 20, 3, seed=2)
    means = kalman_means(model_2d, batch.observations)
    for n in range(3):
        single = np.array([s.mean for s in kalman_filter(model_2d, batch.observations[n])[1:]])
        assert_allclose(means[n], single, rtol=1e-12, atol=1e-12)


def test_kalman_means_init_override(scalar_a098_b2):
    obs = sample_trajectories(scalar_a098_b2, 10, 2, seed=2).observations
    base = kalman_means(scalar_a098_b2, obs)
    shifted = kalman_means(scalar_a098_b2, obs, init_mean=np.array([1.0]))
    gains, _ = kalman_gain_sequence(scalar_a098_b2, 10)
    # the mean recursion is affine, so the offset propagates through prod(alpha(1-K_t))
    factor = np.cumprod(0.98 * (1 - gains[:, 0, 0]))
    assert_allclose(shifted[..., 0] - base[..., 0], np.broadcast_to(factor, (2, 10)), rtol=1e-12)


def test_kalman_mse_beats_alternatives(scalar_a098_b2):
    """The conditional mean has the smallest mean-square error."""
    batch = sample_trajectories(scalar_a098_b2, 50, 4000, seed=7)
    truth = batch.states[:, 1:]
    km = kalman_means(scalar_a098_b2, batch.observations)
    mse = np.mean((km - truth) ** 2)
    assert mse < np.mean((batch.observations - truth) ** 2)
    assert mse < np.mean(truth**2)
    # and it matches the filter's own covariance on average
    _, covs = kalman_gain_sequence(scalar_a098_b2, 50)
    assert_allclose(mse, covs[1:, 0, 0].mean(), rtol=0.05)


def test_step_dimension_check(model_2d):
    with pytest.raises(DimensionError):
        kalman_step(model_2d, initial_state(model_2d), [1.0, 2.0, 3.0])


def test_singular_innovation_raises():
    # two identical, almost noiseless sensors: H P H^T + R is rank one up to 1e-14
    m = LinearGaussianModel([[1.0]], [[1.0], [1.0]], [[1.0]], 1e-14 * np.eye(2), [0.0], [[1.0]])
    with pytest.raises(SingularityError):
        kalman_filter(m, [[0.0, 0.0]])


def test_riccati_nonconvergence_reports_iterate(scalar_a098_b2):
    with pytest.raises(NonConvergenceError) as info:
        riccati_fixed_point(scalar_a098_b2, max_iter=2)
    assert info.value.last_iterate.shape == (1, 1)


def test_stacked_transition_blocks(scalar_a098_b2):
    k = steady_state_gain(scalar_a098_b2)
    a = stacked_transition(scalar_a098_b2, k)
    kk = k[0, 0]
    assert_allclose(a, [[0.98 * (1 - kk), 0.98 * kk], [0.0, 0.98]])


def test_trace_csv(tmp_path, model_2d):
    obs = sample_trajectories(model_2d, 3, 1, seed=0).observations[0]
    states = kalman_filter(model_2d, obs)
    path = tmp_path / "trace.csv"
    write_trace_csv(states, path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",")[:3] == ["t", "mean_1", "mean_2"]
    assert len(lines) == 5
    last = [float(v) for v in lines[-1].split(",")]
    assert_allclose(last[1:3], states[-1].mean, rtol=0)

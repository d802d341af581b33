import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from rnnfilter.errors import DegeneracyError, DimensionError
from rnnfilter.kalman import kalman_means
from rnnfilter.model import LinearGaussianModel, sample_trajectories, scalar_model
from rnnfilter.particle import (
    particle_filter_batch,
    particle_streams,
    pf_estimate,
    pf_init,
    pf_step,
    run_particle_filter,
    systematic_resample,
)


def reference_systematic(w, u):
    """Textbook two-pointer loop."""
    p = len(w)
    cum = np.cumsum(w)
    cum[-1] = 1.0
    out, i = [], 0
    for j in range(p):
        pos = (u + j) / p
        while cum[i] < pos:
            i += 1
        out.append(i)
    return np.array(out)


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30), st.floats(0.0, 0.999999))
@settings(max_examples=300, deadline=None)
def test_resample_matches_reference_loop(raw, u):
    w = np.asarray(raw) + 1e-3
    w /= w.sum()
    assert_array_equal(systematic_resample(w, u), reference_systematic(w, u))


def test_resample_exact_expectation_by_quadrature(rng):
    """Averaging over a fine midpoint grid of u gives E[copies_i] = P w_i up to 1/M."""
    p, m = 20, 20000
    w = rng.random(p) ** 3
    w /= w.sum()
    u = (np.arange(m) + 0.5) / m
    idx = systematic_resample(np.broadcast_to(w, (m, p)), u)
    copies = np.bincount(idx.ravel(), minlength=p) / m
    assert_allclose(copies, p * w, atol=2.0 / m)


def test_resample_copy_counts_are_floor_or_ceil(rng):
    w = rng.random(13)
    w /= w.sum()
    for u in rng.random(50):
        counts = np.bincount(systematic_resample(w, u), minlength=13)
        assert counts.sum() == 13
        assert np.all(counts >= np.floor(13 * w) - 1e-12)
        assert np.all(counts <= np.ceil(13 * w) + 1e-12)


def test_resample_rowwise_batch(rng):
    w = rng.random((4, 3, 9))
    w /= w.sum(axis=-1, keepdims=True)
    u = rng.random((4, 3))
    idx = systematic_resample(w, u)
    assert idx.shape == w.shape
    for a in range(4):
        for b in range(3):
            assert_array_equal(idx[a, b], reference_systematic(w[a, b], u[a, b]))


def test_resample_degenerate_weight():
    w = np.zeros(5)
    w[2] = 1.0
    assert_array_equal(systematic_resample(w, 0.3), [2] * 5)


def test_pf_init_moments():
    m = scalar_model(0.9, 1.0, init_var=4.0, init_mean=3.0)
    ens = pf_init(m, 50000, seed=0)
    assert_allclose(ens.particles.mean(), 3.0, atol=0.03)
    assert_allclose(ens.particles.var(), 4.0, rtol=0.03)
    assert_allclose(ens.weights, 1 / 50000)


def test_pf_step_records_ess_and_resets_weights(scalar_a098_b2):
    streams = particle_streams(1)
    ens = pf_init(scalar_a098_b2, 200, streams)
    ens = pf_step(scalar_a098_b2, ens, [3.0], streams)
    assert ens.t == 1
    assert 1.0 <= ens.ess <= 200.0
    assert_allclose(ens.weights, 1 / 200)


def test_pf_step_dimension_check(scalar_a098_b2):
    streams = particle_streams(1)
    ens = pf_init(scalar_a098_b2, 10, streams)
    with pytest.raises(DimensionError):
        pf_step(scalar_a098_b2, ens, [1.0, 2.0], streams)


def test_pf_degeneracy_raises():
    m = LinearGaussianModel([[0.5]], [[1.0]], [[1e-4]], [[1e-6]], [0.0], [[1e-4]])
    with pytest.raises(DegeneracyError) as info:
        run_particle_filter(m, [[0.0], [1e4]], 20, seed=0)
    assert info.value.t == 2


def test_pf_estimate_weighted():
    from rnnfilter.particle import ParticleEnsemble

    ens = ParticleEnsemble(np.array([[0.0], [10.0]]), np.array([0.75, 0.25]), 1.6)
    assert_allclose(pf_estimate(ens), [2.5])


def test_pf_converges_to_kalman_in_mean(model_2d):
    """With many particles the PF mean approaches the exact conditional mean."""
    batch = sample_trajectories(model_2d, 15, 8, seed=3)
    km = kalman_means(model_2d, batch.observations)
    small = particle_filter_batch(model_2d, batch.observations, 100, seed=4)
    large = particle_filter_batch(model_2d, batch.observations, 5000, seed=4)
    err_small = np.sqrt(np.mean((small - km) ** 2))
    err_large = np.sqrt(np.mean((large - km) ** 2))
    assert err_large < 0.05
    assert err_large < err_small


def test_batch_equals_single_runs(scalar_a098_b2):
    obs = sample_trajectories(scalar_a098_b2, 30, 5, seed=8).observations
    batch = particle_filter_batch(scalar_a098_b2, obs, 64, seed=21, chunk=7)
    children = np.random.SeedSequence(21).spawn(5)
    for n in range(5):
        single = run_particle_filter(scalar_a098_b2, obs[n], 64, children[n])
        assert_array_equal(batch[n], single)


def test_batch_independent_of_chunk_and_size(model_2d):
    obs = sample_trajectories(model_2d, 20, 4, seed=8).observations
    a = particle_filter_batch(model_2d, obs, 32, seed=5, chunk=1)
    b = particle_filter_batch(model_2d, obs, 32, seed=5, chunk=16)
    c = particle_filter_batch(model_2d, obs[:2], 32, seed=5)
    assert_array_equal(a, b)
    assert_array_equal(a[:2], c)

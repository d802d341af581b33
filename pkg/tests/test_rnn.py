import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from rnnfilter.errors import DimensionError, NumericError
from rnnfilter.rnn import (
    HiddenState,
    RnnTopology,
    Variant,
    construct_memorization_params,
    embed_in_general_dense,
    feedback_lipschitz_bound,
    init_random_params,
    initial_hidden,
    load_checkpoint,
    memorization_readout,
    rnn_forward,
    rnn_unroll,
    save_checkpoint,
    unroll_batch,
)


def naive_unroll(params, topology, ys):
    """Scalar-loop reference: every unit computed from its own weighted sum."""
    widths = topology.layer_widths
    num = topology.num_layers
    prev = {k: list(v) for k, v in params.init_hidden.items()}
    outs = []
    for y in ys:
        acts = {0: list(y)}
        for l in range(1, num + 1):
            layer = []
            for i in range(widths[l]):
                z = params.biases[l - 1][i]
                for j in range(widths[l - 1]):
                    z += params.feedforward[l - 1][i, j] * acts[l - 1][j]
                if l < num:
                    for (dst, k), m in params.feedback.items():
                        if dst == l:
                            for j in range(widths[k]):
                                z += m[i, j] * prev[k][j]
                    z = max(z, 0.0)
                layer.append(z)
            acts[l] = layer
        outs.append(acts[num])
        prev = {k: acts[k] for k in prev}
    return np.array(outs)


def randomized(topology, seed):
    params = init_random_params(topology, seed)
    rng = np.random.default_rng(seed + 1)
    params.biases = [b + rng.normal(0, 0.3, b.shape) for b in params.biases]
    params.init_hidden = {k: rng.uniform(0, 1, v.shape) for k, v in params.init_hidden.items()}
    return params


@pytest.mark.parametrize("variant", list(Variant))
@pytest.mark.parametrize("widths", [(1, 7, 7, 1), (2, 3, 4, 5, 2)])
def test_unroll_matches_naive_loop(variant, widths, rng):
    top = RnnTopology(variant, widths)
    params = randomized(top, 3)
    ys = rng.standard_normal((6, widths[0]))
    out, _ = rnn_unroll(params, top, ys)
    assert_allclose(out, naive_unroll(params, top, ys), rtol=1e-12, atol=1e-12)


def test_feedback_structure():
    assert RnnTopology(Variant.RECURSIVE, (1, 4, 4, 4, 1)).feedback_pairs == ((1, 3),)
    assert RnnTopology(Variant.MEMORIZATION, (1, 4, 4, 1)).feedback_pairs == ((1, 1),)
    dense = RnnTopology(Variant.GENERAL_DENSE, (1, 4, 4, 4, 1)).feedback_pairs
    assert dense == ((1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3))


def test_topology_validation():
    with pytest.raises(ValueError):
        RnnTopology(Variant.RECURSIVE, (1, 2))
    with pytest.raises(ValueError):
        RnnTopology(Variant.RECURSIVE, (1, 0, 1))
    assert RnnTopology("recursive", [1, 2, 1]).variant is Variant.RECURSIVE


def test_forward_fold_equals_unroll(rng):
    top = RnnTopology(Variant.RECURSIVE, (2, 5, 5, 3))
    params = randomized(top, 0)
    ys = rng.standard_normal((4, 9, 2))
    out, final = rnn_unroll(params, top, ys)
    state = initial_hidden(params, batch=4)
    for t in range(9):
        o, state = rnn_forward(params, top, state, ys[:, t])
        assert_allclose(o, out[:, t], rtol=1e-14)
    assert state.t == final.t == 9
    assert_allclose(state.layers[2], final.layers[2])


def test_unroll_resume_from_state(rng):
    top = RnnTopology(Variant.RECURSIVE, (1, 7, 7, 1))
    params = randomized(top, 1)
    ys = rng.standard_normal((12, 1))
    full, _ = rnn_unroll(params, top, ys)
    first, mid = rnn_unroll(params, top, ys[:5])
    second, end = rnn_unroll(params, top, ys[5:], s0_override=mid)
    assert_allclose(np.vstack([first, second]), full, rtol=1e-14)
    assert end.t == 12


def test_forward_shape_errors():
    top = RnnTopology(Variant.RECURSIVE, (1, 3, 3, 1))
    params = init_random_params(top, 0)
    with pytest.raises(DimensionError):
        rnn_forward(params, top, initial_hidden(params), [1.0, 2.0])
    with pytest.raises(DimensionError):
        rnn_forward(params, top, HiddenState({}, 0), [1.0])


def test_non_finite_output_raises():
    top = RnnTopology(Variant.RECURSIVE, (1, 1, 1, 1))
    params = init_random_params(top, 0)
    params.feedforward = [np.array([[1.0]]), np.array([[1.0]]), np.array([[1.0]])]
    params.feedback[(1, 2)] = np.array([[1e200]])
    params.init_hidden[2] = np.array([1.0])
    with pytest.raises(NumericError):
        rnn_unroll(params, top, np.ones((5, 1)))


def test_init_is_seeded():
    top = RnnTopology(Variant.GENERAL_DENSE, (1, 7, 7, 1))
    a, b = init_random_params(top, 5), init_random_params(top, 5)
    assert_array_equal(a.flat(), b.flat())
    assert not np.array_equal(a.flat(), init_random_params(top, 6).flat())
    a.check(top)


def test_flat_round_trip():
    top = RnnTopology(Variant.GENERAL_DENSE, (2, 3, 4, 1))
    params = randomized(top, 2)
    back = params.with_flat(params.flat())
    assert_array_equal(back.flat(), params.flat())
    with pytest.raises(DimensionError):
        params.with_flat(np.zeros(params.size + 1))


def test_check_rejects_bad_shapes():
    top = RnnTopology(Variant.RECURSIVE, (1, 3, 3, 1))
    params = init_random_params(top, 0)
    params.biases[0] = np.zeros(4)
    with pytest.raises(DimensionError):
        params.check(top)


@pytest.mark.parametrize("d_y", [1, 2, 3])
def test_memorization_exact_state(d_y, rng):
    horizon, b = 20, 50.0
    params, top = construct_memorization_params(horizon, d_y, 1, b)
    ys = rng.standard_normal((1, horizon, d_y))
    out, _, (acts_t, _) = unroll_batch(params, top, ys, keep=True)
    for t in range(1, horizon + 1):
        want = np.zeros(2 + horizon * d_y)
        want[0] = t
        want[2:2 + t * d_y] = ys[0, t - 1::-1].ravel()
        got = memorization_readout(acts_t[t - 1][1][0], b)
        assert np.abs(got - want).max() <= 4 * np.finfo(float).eps * b
        # the network output carries the same state
        assert np.abs(out[0, t - 1] - want).max() <= 8 * np.finfo(float).eps * b


def test_memorization_carries_initial_estimate():
    params, top = construct_memorization_params(3, 1, 2, 10.0, rho0=[1.5, -2.0])
    out, _ = rnn_unroll(params, top, np.array([[0.1], [0.2], [0.3]]))
    assert_allclose(out[-1], [3, 1.5, -2.0, 0.3, 0.2, 0.1], atol=1e-13)


def test_memorization_breaks_below_bias():
    """Observations below -b are clipped by the ReLU, so the guarantee needs y > -b."""
    params, top = construct_memorization_params(2, 1, 1, 1.0)
    out, _ = rnn_unroll(params, top, np.array([[-5.0], [0.0]]))
    assert out[-1, 3] != -5.0


def test_embed_in_general_dense_same_outputs(rng):
    top = RnnTopology(Variant.RECURSIVE, (1, 5, 5, 1))
    params = randomized(top, 4)
    dense_params, dense = embed_in_general_dense(params, top)
    dense_params.check(dense)
    ys = rng.standard_normal((3, 15, 1))
    assert_allclose(unroll_batch(dense_params, dense, ys)[0], unroll_batch(params, top, ys)[0])


def test_lipschitz_bound_dominates_empirical_ratio(rng):
    top = RnnTopology(Variant.RECURSIVE, (1, 6, 6, 1))
    params = randomized(top, 7)
    bound = feedback_lipschitz_bound(params, top)
    y = rng.standard_normal((200, 1))
    s1 = rng.standard_normal((200, 6))
    s2 = s1 + 0.1 * rng.standard_normal((200, 6))
    a = unroll_batch(params, top, y[:, None], {2: s1}, keep=True)[1][2]
    b = unroll_batch(params, top, y[:, None], {2: s2}, keep=True)[1][2]
    ratio = np.linalg.norm(a - b, axis=1) / np.linalg.norm(s1 - s2, axis=1)
    assert ratio.max() <= bound + 1e-12


def test_checkpoint_round_trip(tmp_path):
    top = RnnTopology(Variant.GENERAL_DENSE, (1, 4, 3, 1))
    params = randomized(top, 9)
    save_checkpoint(params, top, tmp_path / "net.npz")
    back, back_top = load_checkpoint(tmp_path / "net.npz")
    assert back_top == top
    assert_array_equal(back.flat(), params.flat())


def test_checkpoint_rejects_foreign_file(tmp_path):
    np.savez(tmp_path / "other.npz", __meta__=np.frombuffer(b'{"format": "x"}', dtype=np.uint8))
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "other.npz")

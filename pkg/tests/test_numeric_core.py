"""Numeric substrate: tensor ops, rng, dropout statistics, gradient checker."""

import numpy as np
import pytest

from ccn import tensor as T
from ccn.errors import DataError, DeterminismError, ShapeError, VocabError
from ccn.gradcheck import finite_diff_check
from ccn.rng import Rng


def test_matmul_identity():
    eye = T.Tensor(np.eye(2))
    m = T.Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert np.array_equal(T.matmul(eye, m).data, m.data)


def test_matmul_zero():
    a = T.Tensor(np.array([[1.0, 2.0]]))
    b = T.Tensor(np.array([[0.0], [0.0]]))
    assert np.array_equal(T.matmul(a, b).data, [[0.0]])


def test_matmul_hand_computed():
    a = T.Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    b = T.Tensor(np.array([[5.0, 6.0], [7.0, 8.0]]))
    assert np.array_equal(T.matmul(a, b).data, [[19.0, 22.0], [43.0, 50.0]])


def test_matmul_matches_triple_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(10):
        a = rng.normal(size=(5, 5))
        b = rng.normal(size=(5, 5))
        want = np.zeros((5, 5))
        for i in range(5):
            for j in range(5):
                for k in range(5):
                    want[i, j] += a[i, k] * b[k, j]
        got = T.matmul(T.Tensor(a), T.Tensor(b)).data
        assert np.abs(got - want).max() < 1e-12


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((2, 3))))


def test_softmax_symmetric_row():
    out = T.softmax_rows(T.Tensor(np.array([[0.0, 0.0]]))).data
    assert np.allclose(out, [[0.5, 0.5]], atol=1e-12)


def test_softmax_analytic_row():
    out = T.softmax_rows(T.Tensor(np.array([[np.log(2.0), 0.0]]))).data
    assert np.allclose(out, [[2.0 / 3.0, 1.0 / 3.0]], atol=1e-12)


def test_softmax_stabilized_no_overflow():
    out = T.softmax_rows(T.Tensor(np.array([[1000.0, 0.0]]))).data
    assert np.all(np.isfinite(out))
    assert out[0, 0] > 1.0 - 1e-12 and out[0, 1] < 1e-12


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(1)
    for _ in range(20):
        x = rng.normal(scale=50.0, size=(7, 9))
        out = T.softmax_rows(T.Tensor(x)).data
        assert np.abs(out.sum(axis=1) - 1.0).max() < 1e-6
        assert np.all(np.isfinite(out))


def test_layer_norm_constant_row_is_zero():
    gain, bias = T.Tensor(np.ones(4)), T.Tensor(np.zeros(4))
    out = T.layer_norm(T.Tensor(np.full((1, 4), 3.3)), gain, bias).data
    assert np.allclose(out, 0.0)


def test_layer_norm_already_normalized_row():
    gain, bias = T.Tensor(np.ones(2)), T.Tensor(np.zeros(2))
    out = T.layer_norm(T.Tensor(np.array([[1.0, -1.0]])), gain, bias, eps=1e-12).data
    assert np.allclose(out, [[1.0, -1.0]], atol=1e-6)


def test_layer_norm_direct_formula():
    gain, bias = T.Tensor(np.ones(3)), T.Tensor(np.zeros(3))
    out = T.layer_norm(T.Tensor(np.array([[2.0, 4.0, 6.0]])), gain, bias, eps=1e-12).data
    want = np.array([-np.sqrt(1.5), 0.0, np.sqrt(1.5)])
    assert np.allclose(out[0], want, atol=1e-5)


def test_layer_norm_rejects_nonpositive_eps():
    gain, bias = T.Tensor(np.ones(2)), T.Tensor(np.zeros(2))
    with pytest.raises(ValueError):
        T.layer_norm(T.Tensor(np.zeros((1, 2))), gain, bias, eps=0.0)


def test_dropout_p_zero_is_identity():
    x = T.Tensor(np.arange(12.0).reshape(3, 4))
    assert T.dropout(x, 0.0, Rng(0), training=True) is x


def test_dropout_inference_is_identity():
    x = T.Tensor(np.arange(12.0).reshape(3, 4))
    assert T.dropout(x, 0.9, None, training=False) is x


def test_dropout_rejects_bad_probability():
    x = T.Tensor(np.zeros((2, 2)))
    for p in (-0.1, 1.0, 1.5):
        with pytest.raises(ValueError):
            T.dropout(x, p, Rng(0), training=True)


def test_dropout_zeroed_fraction_binomial_bound():
    x = T.Tensor(np.ones((100, 1000)))
    out = T.dropout(x, 0.5, Rng(42), training=True).data
    zeroed = float((out == 0.0).mean())
    assert 0.49 <= zeroed <= 0.51
    # survivors rescaled by 1/(1-p)
    assert np.allclose(out[out != 0.0], 2.0)


def test_dropout_same_seed_bit_identical():
    x = T.Tensor(np.ones((50, 50)))
    a = T.dropout(x, 0.3, Rng(7), training=True).data
    b = T.dropout(x, 0.3, Rng(7), training=True).data
    assert np.array_equal(a, b)


def test_cross_entropy_uniform_logits_is_log_vocab():
    for vocab in (2, 5, 17):
        logits = T.Tensor(np.zeros((1, 3, vocab)))
        targets = np.array([[1, 2, 1]]) % vocab
        loss = T.cross_entropy(logits, targets, smoothing=0.0, pad_id=0)
        assert abs(float(loss.data) - np.log(vocab)) < 1e-12


def test_cross_entropy_one_hot_limit():
    losses = []
    for mag in (1.0, 10.0, 100.0):
        logits = np.zeros((1, 1, 4))
        logits[0, 0, 2] = mag
        losses.append(float(T.cross_entropy(T.Tensor(logits), np.array([[2]]), 0.0, 0).data))
    assert losses[0] > losses[1] > losses[2]
    assert losses[2] < 1e-10


def test_cross_entropy_smoothing_noop_under_uniform_logits():
    logits = T.Tensor(np.zeros((1, 1, 2)))
    loss = T.cross_entropy(logits, np.array([[1]]), smoothing=0.1, pad_id=0)
    assert abs(float(loss.data) - np.log(2.0)) < 1e-12


def test_cross_entropy_excludes_pads():
    logits = np.zeros((1, 2, 4))
    logits[0, 0] = [0.0, 5.0, 0.0, 0.0]
    with_pad = T.cross_entropy(T.Tensor(logits), np.array([[1, 0]]), 0.0, pad_id=0)
    alone = T.cross_entropy(T.Tensor(logits[:, :1]), np.array([[1]]), 0.0, pad_id=0)
    assert float(with_pad.data) == float(alone.data)


def test_cross_entropy_all_pad_batch_is_error():
    with pytest.raises(DataError):
        T.cross_entropy(T.Tensor(np.zeros((1, 3, 4))), np.array([[0, 0, 0]]), 0.0, pad_id=0)


def test_embedding_rejects_out_of_range_ids():
    table = T.parameter("t", np.zeros((4, 2)))
    with pytest.raises(VocabError):
        T.embedding(table, np.array([0, 5]))


def test_rng_same_seed_same_stream():
    a = Rng(123).uniform((1000,))
    b = Rng(123).uniform((1000,))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, Rng(124).uniform((1000,)))


def test_rng_forks_are_independent_and_stable():
    r = Rng(5)
    a1 = r.fork("alpha").uniform((100,))
    a2 = Rng(5).fork("alpha").uniform((100,))
    b = Rng(5).fork("beta").uniform((100,))
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, b)


def test_rng_uniform_marginals():
    u = Rng(99).uniform((200000,))
    assert 0.0 <= u.min() and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 5e-3


def test_rng_permutation_is_a_permutation():
    perm = Rng(3).permutation(257)
    assert sorted(perm.tolist()) == list(range(257))


# ---------------------------------------------------------------------------
# finite-difference checker
# ---------------------------------------------------------------------------


def test_finite_diff_quadratic_exact():
    theta = T.parameter("theta", np.array([[1.0, 2.0]]))
    report = finite_diff_check(
        lambda: T.mean_all(T.matmul(theta, T.transpose(theta))), {"theta": theta}, h=1e-6
    )
    assert np.allclose(theta.grad, [[2.0, 4.0]])
    assert report.max_rel_error < 1e-8


def test_finite_diff_constant_function():
    theta = T.parameter("theta", np.array([[1.0, 2.0]]))
    const = T.Tensor(np.array([[3.0]]))
    report = finite_diff_check(lambda: T.mean_all(T.mul(const, const)), {"theta": theta})
    assert report.max_rel_error == 0.0


def test_finite_diff_detects_nondeterminism():
    theta = T.parameter("theta", np.array([1.0]))
    state = {"n": 0.0}

    def noisy():
        state["n"] += 1.0
        return T.mean_all(T.scale(theta, state["n"]))

    with pytest.raises(DeterminismError):
        finite_diff_check(noisy, {"theta": theta})


def test_random_ops_all_finite():
    rng = np.random.default_rng(2)
    x = T.Tensor(rng.normal(scale=30.0, size=(6, 8)))
    gain, bias = T.Tensor(np.ones(8)), T.Tensor(np.zeros(8))
    for out in (
        T.softmax_rows(x),
        T.layer_norm(x, gain, bias),
        T.relu(x),
        T.matmul(x, T.transpose(x)),
    ):
        assert np.all(np.isfinite(out.data))

"""Attention: non-local oracle equivalence, routings, masks, degradations."""

import numpy as np
import pytest

from ccn import tensor as T
from ccn.attention import (
    LEFT,
    RIGHT,
    AttentionHeadParams,
    AttentionMask,
    GateRouting,
    MultiHeadParams,
    causal_mask,
    coattention,
    crossed_routing,
    multi_head,
    nonlocal_op,
    scaled_dot_attention,
    self_routing,
)
from ccn.errors import DataError, MaskError, ShapeError
from ccn.gradcheck import finite_diff_check


def _head(rng, d, d_k=None, d_v=None):
    d_k = d_k or d
    d_v = d_v or d
    return AttentionHeadParams(
        w_q=T.Tensor(rng.normal(size=(d, d_k))),
        w_k=T.Tensor(rng.normal(size=(d, d_k))),
        w_v=T.Tensor(rng.normal(size=(d, d_v))),
    )


def _mha(rng, d, n_heads):
    d_k = d // n_heads
    heads = [_head(rng, d, d_k, d_k) for _ in range(n_heads)]
    return MultiHeadParams(heads=heads, w_o=T.Tensor(rng.normal(size=(d, d))))


# ---------------------------------------------------------------------------
# routing and masks
# ---------------------------------------------------------------------------


def test_crossed_routing_values():
    left, right = crossed_routing()
    assert left.v_source == LEFT
    assert left.k_source == LEFT
    assert left.q_source == RIGHT
    assert right.q_source == LEFT
    assert right.v_source == RIGHT
    assert left != right


def test_routing_rejects_unknown_channel():
    with pytest.raises(ValueError):
        GateRouting(v_source="left", k_source="middle", q_source="right")


def test_causal_mask_counts():
    assert not causal_mask(1).disallowed.any()
    m2 = causal_mask(2).disallowed
    assert m2.sum() == 1 and m2[0, 1]
    assert causal_mask(4).disallowed.sum() == 6


def test_causal_mask_rejects_zero_length():
    with pytest.raises(ValueError):
        causal_mask(0)


# ---------------------------------------------------------------------------
# non-local oracle
# ---------------------------------------------------------------------------


def test_nonlocal_uniform_weights_is_mean():
    rng = np.random.default_rng(0)
    q = rng.normal(size=(3, 4))
    k = rng.normal(size=(5, 4))
    v = rng.normal(size=(5, 4))
    out = nonlocal_op(q, k, v, lambda qi, kj: 1.0, lambda vj: vj, lambda qi, kk: kk.shape[0])
    assert np.allclose(out, np.tile(v.mean(axis=0), (3, 1)))


def test_nonlocal_single_key_normalizes_away_pairwise():
    rng = np.random.default_rng(1)
    q = rng.normal(size=(4, 3))
    k = rng.normal(size=(1, 3))
    v = rng.normal(size=(1, 3))
    f = lambda qi, kj: float(np.exp(qi @ kj))
    out = nonlocal_op(q, k, v, f, lambda vj: 2.0 * vj, lambda qi, kk: f(qi, kk[0]))
    assert np.allclose(out, np.tile(2.0 * v[0], (4, 1)))


def test_nonlocal_zero_normalizer_identifies_row():
    q = np.zeros((2, 3))
    k = np.zeros((2, 3))
    v = np.zeros((2, 3))
    with pytest.raises(DataError, match="row 0"):
        nonlocal_op(q, k, v, lambda a, b: 1.0, lambda x: x, lambda a, b: 0.0)


def test_nonlocal_exp_kernel_degrades_to_softmax_attention():
    rng = np.random.default_rng(2)
    d = 4
    x = rng.normal(size=(5, d))
    wq, wk, wv = (rng.normal(size=(d, d)) for _ in range(3))
    f = lambda qi, kj: float(np.exp((qi @ wq) @ (kj @ wk)))
    got = nonlocal_op(
        x, x, x, f, lambda vj: vj @ wv, lambda qi, kk: sum(f(qi, kj) for kj in kk)
    )
    scores = (x @ wq) @ (x @ wk).T
    want = T.softmax_rows(T.Tensor(scores)).data @ (x @ wv)
    assert np.abs(got - want).max() < 1e-10


# ---------------------------------------------------------------------------
# scaled dot-product and multi-head
# ---------------------------------------------------------------------------


def test_attention_identical_keys_gives_uniform_mixture():
    rng = np.random.default_rng(3)
    d = 4
    q = T.Tensor(rng.normal(size=(3, d)))
    k = T.Tensor(np.tile(rng.normal(size=(1, d)), (6, 1)))
    v = T.Tensor(rng.normal(size=(6, d)))
    head = _head(rng, d)
    out = scaled_dot_attention(q, k, v, head).data
    want = np.tile((v.data @ head.w_v.data).mean(axis=0), (3, 1))
    assert np.allclose(out, want, atol=1e-12)


def test_attention_single_key():
    rng = np.random.default_rng(4)
    d = 4
    q = T.Tensor(rng.normal(size=(5, d)))
    k = T.Tensor(rng.normal(size=(1, d)))
    v = T.Tensor(rng.normal(size=(1, d)))
    head = _head(rng, d)
    out = scaled_dot_attention(q, k, v, head).data
    assert np.allclose(out, np.tile(v.data[0] @ head.w_v.data, (5, 1)), atol=1e-12)


def test_attention_equals_nonlocal_oracle_on_random_instances():
    rng = np.random.default_rng(5)
    for _ in range(25):
        n_q, n_k, d = rng.integers(2, 7, size=3)
        q = rng.normal(size=(n_q, d))
        k = rng.normal(size=(n_k, d))
        v = rng.normal(size=(n_k, d))
        head = _head(rng, int(d))
        wq, wk, wv = head.w_q.data, head.w_k.data, head.w_v.data
        # fold the 1/sqrt(d_k) scale into the query projection
        wq_scaled = wq / np.sqrt(wk.shape[1])
        f = lambda qi, kj: float(np.exp((qi @ wq_scaled) @ (kj @ wk)))
        want = nonlocal_op(
            q, k, v, f, lambda vj: vj @ wv, lambda qi, kk: sum(f(qi, kj) for kj in kk)
        )
        got = scaled_dot_attention(T.Tensor(q), T.Tensor(k), T.Tensor(v), head).data
        assert np.abs(got - want).max() < 1e-10


def test_attention_width_mismatch_raises():
    rng = np.random.default_rng(6)
    head = _head(rng, 4)
    bad_q = T.Tensor(rng.normal(size=(3, 5)))
    kv = T.Tensor(rng.normal(size=(3, 4)))
    with pytest.raises(ShapeError):
        scaled_dot_attention(bad_q, kv, kv, head)


def test_attention_kv_length_mismatch_raises():
    rng = np.random.default_rng(7)
    head = _head(rng, 4)
    q = T.Tensor(rng.normal(size=(3, 4)))
    k = T.Tensor(rng.normal(size=(5, 4)))
    v = T.Tensor(rng.normal(size=(4, 4)))
    with pytest.raises(ShapeError):
        scaled_dot_attention(q, k, v, head)


def test_fully_masked_row_rejected():
    rng = np.random.default_rng(8)
    head = _head(rng, 4)
    x = T.Tensor(rng.normal(size=(2, 4)))
    mask = AttentionMask(np.array([[True, True], [False, False]]))
    with pytest.raises(MaskError):
        scaled_dot_attention(x, x, x, head, mask=mask)


def test_masked_weights_are_exactly_zero():
    rng = np.random.default_rng(9)
    n = 5
    scores = T.Tensor(rng.normal(size=(n, n)))
    masked = T.apply_attention_mask(scores, causal_mask(n).disallowed)
    weights = T.softmax_rows(masked).data
    assert np.all(weights[np.triu_indices(n, k=1)] == 0.0)
    assert np.abs(weights.sum(axis=1) - 1.0).max() < 1e-6


def test_multi_head_single_head_identity_projection():
    rng = np.random.default_rng(10)
    d = 4
    x = T.Tensor(rng.normal(size=(5, d)))
    head = _head(rng, d)
    params = MultiHeadParams(heads=[head], w_o=T.Tensor(np.eye(d)))
    got = multi_head(x, x, x, params).data
    want = scaled_dot_attention(x, x, x, head).data
    assert np.allclose(got, want, atol=1e-14)


def test_multi_head_output_shape():
    rng = np.random.default_rng(11)
    for n_heads in (1, 2, 4):
        d = 8
        params = _mha(rng, d, n_heads)
        x = T.Tensor(rng.normal(size=(3, d)))
        assert multi_head(x, x, x, params).data.shape == (3, d)


def test_multi_head_head_width_mismatch():
    rng = np.random.default_rng(12)
    heads = [_head(rng, 8, 4, 4), _head(rng, 8, 4, 4)]
    params = MultiHeadParams(heads=heads, w_o=T.Tensor(rng.normal(size=(6, 8))))
    x = T.Tensor(rng.normal(size=(3, 8)))
    with pytest.raises(ShapeError):
        multi_head(x, x, x, params)


def test_multi_head_invariant_under_joint_kv_permutation():
    rng = np.random.default_rng(13)
    d = 8
    params = _mha(rng, d, 2)
    q = T.Tensor(rng.normal(size=(4, d)))
    k = rng.normal(size=(6, d))
    v = rng.normal(size=(6, d))
    base = multi_head(q, T.Tensor(k), T.Tensor(v), params).data
    for _ in range(5):
        perm = rng.permutation(6)
        out = multi_head(q, T.Tensor(k[perm]), T.Tensor(v[perm]), params).data
        assert np.abs(out - base).max() < 1e-10


# ---------------------------------------------------------------------------
# co-attention
# ---------------------------------------------------------------------------


def test_coattention_degrades_to_two_self_attentions():
    rng = np.random.default_rng(14)
    d = 8
    left_params, right_params = _mha(rng, d, 2), _mha(rng, d, 2)
    x_l = T.Tensor(rng.normal(size=(5, d)))
    x_r = T.Tensor(rng.normal(size=(3, d)))
    y_l, y_r = coattention(
        x_l, x_r, self_routing(LEFT), self_routing(RIGHT), left_params, right_params
    )
    assert np.abs(y_l.data - multi_head(x_l, x_l, x_l, left_params).data).max() < 1e-10
    assert np.abs(y_r.data - multi_head(x_r, x_r, x_r, right_params).data).max() < 1e-10


def test_coattention_crossed_with_equal_inputs_and_shared_params():
    rng = np.random.default_rng(15)
    d = 8
    shared = _mha(rng, d, 2)
    x = T.Tensor(rng.normal(size=(4, d)))
    rl, rr = crossed_routing()
    y_l, y_r = coattention(x, x, rl, rr, shared, shared)
    self_attn = multi_head(x, x, x, shared).data
    assert np.array_equal(y_l.data, y_r.data)
    assert np.abs(y_l.data - self_attn).max() < 1e-12


def test_coattention_single_position_is_weightless():
    rng = np.random.default_rng(16)
    d = 6
    left_params, right_params = _mha(rng, d, 1), _mha(rng, d, 1)
    x_l = T.Tensor(rng.normal(size=(1, d)))
    x_r = T.Tensor(rng.normal(size=(1, d)))
    rl, rr = crossed_routing()
    y_l, y_r = coattention(x_l, x_r, rl, rr, left_params, right_params)
    want_l = (x_l.data @ left_params.heads[0].w_v.data) @ left_params.w_o.data
    want_r = (x_r.data @ right_params.heads[0].w_v.data) @ right_params.w_o.data
    assert np.allclose(y_l.data, want_l, atol=1e-12)
    assert np.allclose(y_r.data, want_r, atol=1e-12)


def test_coattention_kv_split_across_channels_length_mismatch():
    rng = np.random.default_rng(17)
    d = 4
    params = _mha(rng, d, 1), _mha(rng, d, 1)
    x_l = T.Tensor(rng.normal(size=(3, d)))
    x_r = T.Tensor(rng.normal(size=(5, d)))
    split = GateRouting(v_source=LEFT, k_source=RIGHT, q_source=LEFT)
    with pytest.raises(ShapeError):
        coattention(x_l, x_r, split, self_routing(RIGHT), params[0], params[1])


def test_row_space_property_with_identity_value_map():
    # with W_v = I and w_o = I every output row is a mixture of rows of V
    rng = np.random.default_rng(18)
    for _ in range(20):
        n_k, d = int(rng.integers(2, 7)), int(rng.integers(2, 7))
        n_q = int(rng.integers(2, 7))
        head = AttentionHeadParams(
            w_q=T.Tensor(rng.normal(size=(d, d))),
            w_k=T.Tensor(rng.normal(size=(d, d))),
            w_v=T.Tensor(np.eye(d)),
        )
        q = rng.normal(size=(n_q, d))
        k = rng.normal(size=(n_k, d))
        v = rng.normal(size=(n_k, d))
        out = scaled_dot_attention(T.Tensor(q), T.Tensor(k), T.Tensor(v), head).data
        basis = np.linalg.svd(v, full_matrices=False)[2]
        residual = out - (out @ basis.T) @ basis
        assert np.abs(residual).max() < 1e-8


def test_coattention_gradients_pass_finite_differences():
    rng = np.random.default_rng(19)
    d = 4
    x_l = T.parameter("x_l", rng.normal(size=(3, d)))
    x_r = T.parameter("x_r", rng.normal(size=(2, d)))
    params = {}
    mhas = []
    for side in ("left", "right"):
        head = AttentionHeadParams(
            w_q=T.parameter(f"{side}.wq", rng.normal(size=(d, d))),
            w_k=T.parameter(f"{side}.wk", rng.normal(size=(d, d))),
            w_v=T.parameter(f"{side}.wv", rng.normal(size=(d, d))),
        )
        w_o = T.parameter(f"{side}.wo", rng.normal(size=(d, d)))
        mhas.append(MultiHeadParams(heads=[head], w_o=w_o))
        params |= {
            f"{side}.wq": head.w_q,
            f"{side}.wk": head.w_k,
            f"{side}.wv": head.w_v,
            f"{side}.wo": w_o,
        }
    params |= {"x_l": x_l, "x_r": x_r}
    rl, rr = crossed_routing()

    def loss():
        y_l, y_r = coattention(x_l, x_r, rl, rr, mhas[0], mhas[1])
        return T.add(T.mean_all(T.mul(y_l, y_l)), T.mean_all(T.mul(y_r, y_r)))

    report = finite_diff_check(loss, params, h=1e-6)
    assert report.max_rel_error < 1e-5, report.per_param

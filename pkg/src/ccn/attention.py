"""Attention blocks: generic non-local form, scaled dot-product, multi-head,
and the two-channel gate-routed co-attention.

``nonlocal_op`` is a deliberately slow double loop kept as the independent
oracle for the vectorized path; do not "optimize" it. The co-attention pair
routes each of the V/K/Q gates of two branches to either the left or right
input channel; the crossed routing keeps V and K at home and borrows the
query from the opposite channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError
from .tensor import Tensor, apply_attention_mask, concat, matmul, scale, softmax_rows, transpose

LEFT = "left"
RIGHT = "right"
_CHANNELS = (LEFT, RIGHT)


@dataclass(frozen=True)
class GateRouting:
    """Maps each attention gate of one branch to an input channel."""

    v_source: str
    k_source: str
    q_source: str

    def __post_init__(self):
        for gate, src in (("V", self.v_source), ("K", self.k_source), ("Q", self.q_source)):
            if src not in _CHANNELS:
                raise ValueError(f"gate {gate} routed to unknown channel {src!r}")


def crossed_routing() -> tuple[GateRouting, GateRouting]:
    """Left branch keeps its own V and K, queries with the right channel; mirrored for right."""
    left = GateRouting(v_source=LEFT, k_source=LEFT, q_source=RIGHT)
    right = GateRouting(v_source=RIGHT, k_source=RIGHT, q_source=LEFT)
    return left, right


def self_routing(channel: str) -> GateRouting:
    return GateRouting(v_source=channel, k_source=channel, q_source=channel)


@dataclass
class AttentionMask:
    """Boolean matrix of disallowed (query, key) pairs; may carry a batch axis."""

    disallowed: np.ndarray

    def __post_init__(self):
        self.disallowed = np.asarray(self.disallowed, dtype=bool)

    @property
    def shape(self):
        return self.disallowed.shape


def causal_mask(n: int) -> AttentionMask:
    """Disallow attending to strictly later positions."""
    if n < 1:
        raise ValueError(f"causal mask needs length >= 1, got {n}")
    return AttentionMask(np.triu(np.ones((n, n), dtype=bool), k=1))


def padding_mask(n_q: int, key_is_pad: np.ndarray) -> AttentionMask:
    """Disallow pad keys for every query row. ``key_is_pad`` is (n_k,) or (B, n_k)."""
    key_is_pad = np.asarray(key_is_pad, dtype=bool)
    if key_is_pad.ndim == 1:
        return AttentionMask(np.broadcast_to(key_is_pad, (n_q, key_is_pad.shape[0])))
    b, n_k = key_is_pad.shape
    return AttentionMask(np.broadcast_to(key_is_pad[:, None, :], (b, n_q, n_k)))


def combine_masks(*masks: AttentionMask | None) -> AttentionMask | None:
    live = [m for m in masks if m is not None]
    if not live:
        return None
    out = live[0].disallowed
    for m in live[1:]:
        out = out | m.disallowed
    return AttentionMask(out)


@dataclass
class AttentionHeadParams:
    """Per-head projection weights (bias-free)."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor


@dataclass
class MultiHeadParams:
    heads: list[AttentionHeadParams]
    w_o: Tensor


# ---------------------------------------------------------------------------
# generic non-local operation (oracle; plain numpy, forward only)
# ---------------------------------------------------------------------------


def nonlocal_op(q, k, v, pairwise, unary, normalizer) -> np.ndarray:
    """y_i = (1 / normalizer(q_i, K)) * sum_j pairwise(q_i, k_j) * unary(v_j).

    Direct double loop over query and key positions; the reference
    implementation the fast attention path is tested against.
    """
    q, k, v = (np.asarray(x, dtype=np.float64) for x in (q, k, v))
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"K and V disagree on length: {k.shape} vs {v.shape}")
    n_q = q.shape[0]
    rows = []
    for i in range(n_q):
        c = float(normalizer(q[i], k))
        if c == 0.0:
            raise DataError(f"non-local normalizer is zero for query row {i}")
        acc = None
        for j in range(k.shape[0]):
            term = float(pairwise(q[i], k[j])) * np.asarray(unary(v[j]), dtype=np.float64)
            acc = term if acc is None else acc + term
        rows.append(acc / c)
    return np.stack(rows)


# ---------------------------------------------------------------------------
# fast path
# ---------------------------------------------------------------------------


def scaled_dot_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    params: AttentionHeadParams,
    mask: AttentionMask | None = None,
    scaled: bool = True,
) -> Tensor:
    """softmax(q W_q (k W_k)^T / sqrt(d_k)) (v W_v); one attention head.

    ``scaled=False`` drops the 1/sqrt(d_k) factor, which recovers the bare
    exponential-kernel instantiation of the non-local form.
    """
    if q.data.shape[-1] != params.w_q.data.shape[-2]:
        raise ShapeError(
            f"query width {q.data.shape} does not match projection {params.w_q.data.shape}"
        )
    qh = matmul(q, params.w_q)
    kh = matmul(k, params.w_k)
    vh = matmul(v, params.w_v)
    scores = matmul(qh, transpose(kh))
    if scaled:
        scores = scale(scores, 1.0 / np.sqrt(params.w_k.data.shape[-1]))
    if mask is not None:
        scores = apply_attention_mask(scores, mask.disallowed)
    return matmul(softmax_rows(scores), vh)


def multi_head(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    params: MultiHeadParams,
    mask: AttentionMask | None = None,
) -> Tensor:
    """Concatenate per-head attention outputs along features and project by w_o."""
    d_out = sum(h.w_v.data.shape[-1] for h in params.heads)
    if d_out != params.w_o.data.shape[-2]:
        raise ShapeError(
            f"head widths sum to {d_out} but output projection expects {params.w_o.data.shape[-2]}"
        )
    outs = [scaled_dot_attention(q, k, v, h, mask=mask) for h in params.heads]
    merged = outs[0] if len(outs) == 1 else concat(outs, axis=-1)
    return matmul(merged, params.w_o)


def coattention(
    x_left: Tensor,
    x_right: Tensor,
    left_routing: GateRouting,
    right_routing: GateRouting,
    left_params: MultiHeadParams,
    right_params: MultiHeadParams,
    left_mask: AttentionMask | None = None,
    right_mask: AttentionMask | None = None,
) -> tuple[Tensor, Tensor]:
    """Two attention branches whose V/K/Q gates draw from either input channel.

    Each output's length follows its branch's query source; branch parameters
    are independent unless the caller ties them explicitly.
    """
    channels = {LEFT: x_left, RIGHT: x_right}

    def branch(routing: GateRouting, params: MultiHeadParams, mask):
        return multi_head(
            q=channels[routing.q_source],
            k=channels[routing.k_source],
            v=channels[routing.v_source],
            params=params,
            mask=mask,
        )

    return branch(left_routing, left_params, left_mask), branch(right_routing, right_params, right_mask)

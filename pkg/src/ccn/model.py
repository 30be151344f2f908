"""Dual-branch crossed co-attention encoder/decoder and the single-branch
transformer baseline, plus analytic parameter counting.

Both architectures share one BPE embedding table globally (source, target,
and transposed output projection), sinusoidal positions, post-norm residual
sublayers, bias-free attention projections, and biased feed-forward layers.

The dual-branch model per block:
  encoder: crossed co-attention over the (left, right) pair, then a
           feed-forward sublayer per branch.
  decoder: one masked self-attention; two parallel encoder-decoder
           attentions (left reads the left memory, right the right), each
           followed by its own feed-forward sublayer; the branch outputs are
           concatenated, mapped back to model width, and passed through one
           shared feed-forward sublayer.
Each stream ends with a final layer norm when the stack is non-empty.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .attention import (
    AttentionHeadParams,
    MultiHeadParams,
    causal_mask,
    coattention,
    crossed_routing,
    multi_head,
    padding_mask,
)
from .errors import DataError, ShapeError
from .rng import Rng
from .tensor import (
    Tensor,
    add,
    concat,
    cross_entropy,
    dropout,
    embedding,
    layer_norm,
    matmul,
    parameter,
    relu,
    scale,
    transpose,
)

PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3

ARCH_THM = "thm"
ARCH_TRANSFORMER = "transformer"

LAYER_NORM_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    arch: str = ARCH_THM
    d_model: int = 512
    n_heads: int = 8
    n_blocks: int = 6
    d_ff: int = 2048
    vocab_size: int = 33712
    dropout_p: float = 0.1
    swap_prob: float = 0.5
    max_len: int = 1024
    label_smoothing: float = 0.1

    def __post_init__(self):
        if self.arch not in (ARCH_THM, ARCH_TRANSFORMER):
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        for name, p in (("dropout_p", self.dropout_p), ("swap_prob", self.swap_prob)):
            if not 0.0 <= p < 1.0 and not (name == "swap_prob" and p == 1.0):
                raise ValueError(f"{name} must be a probability, got {p}")
        if self.vocab_size < 5:
            raise ValueError("vocab_size must cover the four special tokens plus content")


PRESETS: dict[str, ModelConfig] = {
    "thm-base": ModelConfig(arch=ARCH_THM),
    "thm-big": ModelConfig(arch=ARCH_THM, d_model=1024, n_heads=16, d_ff=4096, dropout_p=0.3),
    "transformer-base": ModelConfig(arch=ARCH_TRANSFORMER, swap_prob=0.0),
    "transformer-big": ModelConfig(
        arch=ARCH_TRANSFORMER, d_model=1024, n_heads=16, d_ff=4096, dropout_p=0.3, swap_prob=0.0
    ),
    "tiny": ModelConfig(
        arch=ARCH_THM, d_model=64, n_heads=4, n_blocks=2, d_ff=256, vocab_size=256, max_len=64
    ),
    "transformer-tiny": ModelConfig(
        arch=ARCH_TRANSFORMER,
        d_model=64,
        n_heads=4,
        n_blocks=2,
        d_ff=256,
        vocab_size=256,
        max_len=64,
        swap_prob=0.0,
    ),
}


def preset(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(PRESETS[name], **overrides) if overrides else PRESETS[name]


# ---------------------------------------------------------------------------
# parameter construction
# ---------------------------------------------------------------------------


class ParamStore:
    """Creates named parameters in a fixed order (the checkpoint order)."""

    def __init__(self, rng: Rng, dtype):
        self.rng = rng
        self.dtype = dtype
        self.params: dict[str, Tensor] = {}

    def _register(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = parameter(name, data.astype(self.dtype))
        self.params[name] = p
        return p

    def xavier(self, name: str, fan_in: int, fan_out: int) -> Tensor:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return self._register(name, self.rng.uniform_range(-limit, limit, (fan_in, fan_out)))

    def embedding_table(self, name: str, vocab: int, d: int) -> Tensor:
        limit = np.sqrt(3.0 / d)
        return self._register(name, self.rng.uniform_range(-limit, limit, (vocab, d)))

    def zeros(self, name: str, shape) -> Tensor:
        return self._register(name, np.zeros(shape))

    def ones(self, name: str, shape) -> Tensor:
        return self._register(name, np.ones(shape))


@dataclass
class NormParams:
    gain: Tensor
    bias: Tensor


@dataclass
class FeedForwardParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


def _make_norm(store: ParamStore, prefix: str, d: int) -> NormParams:
    return NormParams(store.ones(f"{prefix}.gain", (d,)), store.zeros(f"{prefix}.bias", (d,)))


def _make_ffn(store: ParamStore, prefix: str, d: int, d_ff: int) -> FeedForwardParams:
    return FeedForwardParams(
        store.xavier(f"{prefix}.w1", d, d_ff),
        store.zeros(f"{prefix}.b1", (d_ff,)),
        store.xavier(f"{prefix}.w2", d_ff, d),
        store.zeros(f"{prefix}.b2", (d,)),
    )


def _make_mha(store: ParamStore, prefix: str, d: int, n_heads: int) -> MultiHeadParams:
    d_k = d // n_heads
    heads = [
        AttentionHeadParams(
            w_q=store.xavier(f"{prefix}.h{j}.wq", d, d_k),
            w_k=store.xavier(f"{prefix}.h{j}.wk", d, d_k),
            w_v=store.xavier(f"{prefix}.h{j}.wv", d, d_k),
        )
        for j in range(n_heads)
    ]
    return MultiHeadParams(heads=heads, w_o=store.xavier(f"{prefix}.wo", d, d))


# ---------------------------------------------------------------------------
# shared forward pieces
# ---------------------------------------------------------------------------


def sinusoidal_positions(max_len: int, d: int) -> np.ndarray:
    """PE[pos, 2i] = sin(pos / 10000^(2i/d)); PE[pos, 2i+1] = cos of the same angle."""
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    i2 = np.arange(0, d, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i2 / d)
    pe = np.zeros((max_len, d), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe


def _linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return add(y, b) if b is not None else y


def _ffn(x: Tensor, p: FeedForwardParams) -> Tensor:
    return _linear(relu(_linear(x, p.w1, p.b1)), p.w2, p.b2)


@dataclass
class EncoderMemory:
    """Final encoder states for both branches plus the source pad mask."""

    mem_left: Tensor
    mem_right: Tensor
    src_pad: np.ndarray

    def __post_init__(self):
        if self.mem_left.data.shape[-2] != self.mem_right.data.shape[-2]:
            raise ShapeError(
                f"branch memories disagree on source length: "
                f"{self.mem_left.data.shape} vs {self.mem_right.data.shape}"
            )


class Seq2SeqModel:
    """Common state: config, shared embedding, positions, parameter registry."""

    def __init__(self, config: ModelConfig, rng: Rng, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        store = ParamStore(rng.fork("init"), self.dtype)
        self.embed_table = store.embedding_table(
            "embedding.table", config.vocab_size, config.d_model
        )
        self._build(store)
        self.params = store.params
        self.positions = sinusoidal_positions(config.max_len, config.d_model).astype(self.dtype)

    def _build(self, store: ParamStore):
        raise NotImplementedError

    # -- shared pieces ------------------------------------------------------

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grads(self):
        for p in self.params.values():
            p.zero_grad()

    def _check_len(self, ids: np.ndarray, what: str):
        if ids.shape[-1] > self.config.max_len:
            raise DataError(
                f"{what} length {ids.shape[-1]} exceeds max_len {self.config.max_len}"
            )

    def embed_tokens(
        self, ids: np.ndarray, positions: bool = True, training: bool = False, rng: Rng | None = None
    ) -> Tensor:
        """Shared-table lookup scaled by sqrt(d) plus sinusoidal positions."""
        ids = np.asarray(ids)
        self._check_len(ids, "sequence")
        x = scale(embedding(self.embed_table, ids), float(np.sqrt(self.config.d_model)))
        if positions:
            x = add(x, Tensor(self.positions[: ids.shape[-1]]))
        return dropout(x, self.config.dropout_p, rng, training)

    def _sublayer(self, x: Tensor, sub_out: Tensor, norm: NormParams, training, rng) -> Tensor:
        """Post-norm residual: layer_norm(x + dropout(sub_out))."""
        return layer_norm(
            add(x, dropout(sub_out, self.config.dropout_p, rng, training)),
            norm.gain,
            norm.bias,
            LAYER_NORM_EPS,
        )

    def project_vocab(self, h: Tensor) -> Tensor:
        """Output projection tied to the transposed embedding table."""
        return matmul(h, transpose(self.embed_table))

    # -- decode-time helpers ------------------------------------------------

    def encode_for_decode(self, src_ids: list[int]) -> EncoderMemory:
        raise NotImplementedError

    def decode(self, memory: EncoderMemory, tgt_in, training=False, rng=None) -> Tensor:
        raise NotImplementedError

    def next_logprobs(self, memory: EncoderMemory, prefix: list[int]) -> np.ndarray:
        """Log-probabilities of the next token after a [BOS, ...] prefix."""
        ids = np.asarray(prefix, dtype=np.int64)[None, :]
        logits = self.decode(memory, ids).data[0, -1].astype(np.float64)
        logits -= logits.max()
        return logits - np.log(np.exp(logits).sum())

    def loss_on_batch(self, batch, training: bool = False, rng: Rng | None = None) -> Tensor:
        logits = self.forward_logits(batch, training=training, rng=rng)
        return cross_entropy(
            logits, batch.tgt_out, smoothing=self.config.label_smoothing, pad_id=PAD_ID
        )

    def forward_logits(self, batch, training: bool = False, rng: Rng | None = None) -> Tensor:
        raise NotImplementedError


class CrossedCoAttentionModel(Seq2SeqModel):
    """Two symmetric encoder branches intertwined by crossed V/K/Q routing."""

    def _build(self, store: ParamStore):
        cfg = self.config
        d, f, h = cfg.d_model, cfg.d_ff, cfg.n_heads
        self.enc_blocks = []
        for i in range(cfg.n_blocks):
            block = {}
            for side in ("left", "right"):
                p = f"enc.{i}.{side}"
                block[side] = {
                    "attn": _make_mha(store, f"{p}.attn", d, h),
                    "attn_norm": _make_norm(store, f"{p}.attn_norm", d),
                    "ffn": _make_ffn(store, f"{p}.ffn", d, f),
                    "ffn_norm": _make_norm(store, f"{p}.ffn_norm", d),
                }
            self.enc_blocks.append(block)
        self.dec_blocks = []
        for i in range(cfg.n_blocks):
            p = f"dec.{i}"
            block = {
                "self_attn": _make_mha(store, f"{p}.self_attn", d, h),
                "self_norm": _make_norm(store, f"{p}.self_norm", d),
            }
            for side in ("left", "right"):
                block[side] = {
                    "cross": _make_mha(store, f"{p}.{side}.cross", d, h),
                    "cross_norm": _make_norm(store, f"{p}.{side}.cross_norm", d),
                    "ffn": _make_ffn(store, f"{p}.{side}.ffn", d, f),
                    "ffn_norm": _make_norm(store, f"{p}.{side}.ffn_norm", d),
                }
            block["merge_w"] = store.xavier(f"{p}.merge.w", 2 * d, d)
            block["merge_b"] = store.zeros(f"{p}.merge.b", (d,))
            block["merge_norm"] = _make_norm(store, f"{p}.merge_norm", d)
            block["ffn"] = _make_ffn(store, f"{p}.ffn", d, f)
            block["ffn_norm"] = _make_norm(store, f"{p}.ffn_norm", d)
            self.dec_blocks.append(block)
        if cfg.n_blocks:
            self.enc_final = {
                "left": _make_norm(store, "enc.final_left_norm", d),
                "right": _make_norm(store, "enc.final_right_norm", d),
            }
            self.dec_final = _make_norm(store, "dec.final_norm", d)

    def encode(
        self,
        src_left: np.ndarray,
        src_right: np.ndarray,
        training: bool = False,
        rng: Rng | None = None,
        routing: tuple | None = None,
    ) -> EncoderMemory:
        """Run both branches; inputs are two (possibly differently corrupted)
        copies of the same padded source batch. ``routing`` overrides the
        crossed default (testing hook for the degradation identity)."""
        src_left = np.atleast_2d(np.asarray(src_left))
        src_right = np.atleast_2d(np.asarray(src_right))
        if src_left.shape != src_right.shape:
            raise ShapeError(
                f"branch inputs must align: {src_left.shape} vs {src_right.shape}"
            )
        src_pad = src_left == PAD_ID
        n = src_left.shape[-1]
        key_mask = padding_mask(n, src_pad)
        route_left, route_right = routing if routing is not None else crossed_routing()
        x_l = self.embed_tokens(src_left, training=training, rng=rng)
        x_r = self.embed_tokens(src_right, training=training, rng=rng)
        for block in self.enc_blocks:
            y_l, y_r = coattention(
                x_l,
                x_r,
                route_left,
                route_right,
                block["left"]["attn"],
                block["right"]["attn"],
                left_mask=key_mask,
                right_mask=key_mask,
            )
            x_l = self._sublayer(x_l, y_l, block["left"]["attn_norm"], training, rng)
            x_r = self._sublayer(x_r, y_r, block["right"]["attn_norm"], training, rng)
            x_l = self._sublayer(x_l, _ffn(x_l, block["left"]["ffn"]), block["left"]["ffn_norm"], training, rng)
            x_r = self._sublayer(x_r, _ffn(x_r, block["right"]["ffn"]), block["right"]["ffn_norm"], training, rng)
        if self.enc_blocks:
            x_l = layer_norm(x_l, self.enc_final["left"].gain, self.enc_final["left"].bias, LAYER_NORM_EPS)
            x_r = layer_norm(x_r, self.enc_final["right"].gain, self.enc_final["right"].bias, LAYER_NORM_EPS)
        return EncoderMemory(mem_left=x_l, mem_right=x_r, src_pad=src_pad)

    def _decode_branch(self, block, side: str, s: Tensor, mem: Tensor, cross_mask, training, rng) -> Tensor:
        """One decoder branch: cross-attention into a memory, then its own FFN."""
        sub = block[side]
        c = self._sublayer(
            s, multi_head(s, mem, mem, sub["cross"], mask=cross_mask), sub["cross_norm"], training, rng
        )
        return self._sublayer(c, _ffn(c, sub["ffn"]), sub["ffn_norm"], training, rng)

    def decode(self, memory: EncoderMemory, tgt_in, training=False, rng=None) -> Tensor:
        tgt_in = np.atleast_2d(np.asarray(tgt_in))
        m = tgt_in.shape[-1]
        self._check_len(tgt_in, "target")
        self_mask = causal_mask(m)
        cross_mask = padding_mask(m, memory.src_pad)
        t = self.embed_tokens(tgt_in, training=training, rng=rng)
        for block in self.dec_blocks:
            s = self._sublayer(
                t,
                multi_head(t, t, t, block["self_attn"], mask=self_mask),
                block["self_norm"],
                training,
                rng,
            )
            halves = [
                self._decode_branch(block, side, s, mem, cross_mask, training, rng)
                for side, mem in (("left", memory.mem_left), ("right", memory.mem_right))
            ]
            merged = _linear(concat(halves, axis=-1), block["merge_w"], block["merge_b"])
            u = self._sublayer(s, merged, block["merge_norm"], training, rng)
            t = self._sublayer(u, _ffn(u, block["ffn"]), block["ffn_norm"], training, rng)
        if self.dec_blocks:
            t = layer_norm(t, self.dec_final.gain, self.dec_final.bias, LAYER_NORM_EPS)
        return self.project_vocab(t)

    def forward_logits(self, batch, training=False, rng=None) -> Tensor:
        memory = self.encode(
            batch.src_corrupt_left, batch.src_corrupt_right, training=training, rng=rng
        )
        return self.decode(memory, batch.tgt_in, training=training, rng=rng)

    def encode_for_decode(self, src_ids: list[int]) -> EncoderMemory:
        ids = np.asarray(src_ids, dtype=np.int64)[None, :]
        # both branches read the clean source at inference
        return self.encode(ids, ids)


class TransformerModel(Seq2SeqModel):
    """Single-branch baseline with the same embeddings, masking and positions."""

    def _build(self, store: ParamStore):
        cfg = self.config
        d, f, h = cfg.d_model, cfg.d_ff, cfg.n_heads
        self.enc_blocks = []
        for i in range(cfg.n_blocks):
            p = f"enc.{i}"
            self.enc_blocks.append(
                {
                    "attn": _make_mha(store, f"{p}.attn", d, h),
                    "attn_norm": _make_norm(store, f"{p}.attn_norm", d),
                    "ffn": _make_ffn(store, f"{p}.ffn", d, f),
                    "ffn_norm": _make_norm(store, f"{p}.ffn_norm", d),
                }
            )
        self.dec_blocks = []
        for i in range(cfg.n_blocks):
            p = f"dec.{i}"
            self.dec_blocks.append(
                {
                    "self_attn": _make_mha(store, f"{p}.self_attn", d, h),
                    "self_norm": _make_norm(store, f"{p}.self_norm", d),
                    "cross": _make_mha(store, f"{p}.cross", d, h),
                    "cross_norm": _make_norm(store, f"{p}.cross_norm", d),
                    "ffn": _make_ffn(store, f"{p}.ffn", d, f),
                    "ffn_norm": _make_norm(store, f"{p}.ffn_norm", d),
                }
            )
        if cfg.n_blocks:
            self.enc_final = _make_norm(store, "enc.final_norm", d)
            self.dec_final = _make_norm(store, "dec.final_norm", d)

    def encode(self, src: np.ndarray, training: bool = False, rng: Rng | None = None) -> EncoderMemory:
        src = np.atleast_2d(np.asarray(src))
        src_pad = src == PAD_ID
        key_mask = padding_mask(src.shape[-1], src_pad)
        x = self.embed_tokens(src, training=training, rng=rng)
        for block in self.enc_blocks:
            x = self._sublayer(
                x, multi_head(x, x, x, block["attn"], mask=key_mask), block["attn_norm"], training, rng
            )
            x = self._sublayer(x, _ffn(x, block["ffn"]), block["ffn_norm"], training, rng)
        if self.enc_blocks:
            x = layer_norm(x, self.enc_final.gain, self.enc_final.bias, LAYER_NORM_EPS)
        return EncoderMemory(mem_left=x, mem_right=x, src_pad=src_pad)

    def decode(self, memory: EncoderMemory, tgt_in, training=False, rng=None) -> Tensor:
        tgt_in = np.atleast_2d(np.asarray(tgt_in))
        m = tgt_in.shape[-1]
        self._check_len(tgt_in, "target")
        self_mask = causal_mask(m)
        cross_mask = padding_mask(m, memory.src_pad)
        t = self.embed_tokens(tgt_in, training=training, rng=rng)
        mem = memory.mem_left
        for block in self.dec_blocks:
            s = self._sublayer(
                t, multi_head(t, t, t, block["self_attn"], mask=self_mask), block["self_norm"], training, rng
            )
            c = self._sublayer(
                s, multi_head(s, mem, mem, block["cross"], mask=cross_mask), block["cross_norm"], training, rng
            )
            t = self._sublayer(c, _ffn(c, block["ffn"]), block["ffn_norm"], training, rng)
        if self.dec_blocks:
            t = layer_norm(t, self.dec_final.gain, self.dec_final.bias, LAYER_NORM_EPS)
        return self.project_vocab(t)

    def forward_logits(self, batch, training=False, rng=None) -> Tensor:
        memory = self.encode(batch.src, training=training, rng=rng)
        return self.decode(memory, batch.tgt_in, training=training, rng=rng)

    def encode_for_decode(self, src_ids: list[int]) -> EncoderMemory:
        ids = np.asarray(src_ids, dtype=np.int64)[None, :]
        return self.encode(ids)


def build_model(config: ModelConfig, rng: Rng, dtype=np.float32) -> Seq2SeqModel:
    cls = CrossedCoAttentionModel if config.arch == ARCH_THM else TransformerModel
    return cls(config, rng, dtype=dtype)


# ---------------------------------------------------------------------------
# analytic parameter counting (no allocation)
# ---------------------------------------------------------------------------


def count_parameters(config: ModelConfig) -> tuple[int, dict[str, int]]:
    """Closed-form parameter totals per component for a config."""
    d, f, v, n = config.d_model, config.d_ff, config.vocab_size, config.n_blocks
    attn = 4 * d * d
    ffn = d * f + f + f * d + d
    norm = 2 * d
    breakdown = {"embedding": v * d}
    if config.arch == ARCH_THM:
        enc_block = 2 * attn + 2 * ffn + 4 * norm
        dec_block = 3 * attn + 3 * ffn + (2 * d * d + d) + 7 * norm
        finals = 3 * norm if n else 0
    else:
        enc_block = attn + ffn + 2 * norm
        dec_block = 2 * attn + ffn + 3 * norm
        finals = 2 * norm if n else 0
    breakdown["encoder"] = n * enc_block
    breakdown["decoder"] = n * dec_block
    breakdown["final_norms"] = finals
    return sum(breakdown.values()), breakdown

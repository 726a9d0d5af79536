"""Transformer encoder/decoder blocks for trajectory sequences.

Sequences are (L, d_model) tensors. Sinusoidal position encodings are added
to the block input before every Q/K/V projection (at every layer, not just
the first). Blocks use the post-norm residual layout: normalize after the
residual sum, once after attention and once after the feed-forward net.
Decoder blocks add causally masked self-attention plus cross-attention into
the encoded history.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .autodiff import (
    Parameter,
    Tensor,
    add,
    constant,
    concat_cols,
    layer_norm,
    linear,
    matmul,
    relu,
    scale,
    slice_cols,
    softmax_rows,
    transpose,
)

MASK_VALUE = -1e30


@dataclass(frozen=True)
class TrajFormerConfig:
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ffn: int = 128
    max_len: int = 512

    def __post_init__(self):
        for name in ("d_model", "n_heads", "n_layers", "d_ffn", "max_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"TrajFormerConfig.{name} must be positive")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


def positional_encoding(length: int, d_model: int, max_len: int = 512) -> np.ndarray:
    """Interleaved sinusoidal encoding, shape (length, d_model).

    Dimension 2i carries sin(t / 10000^(2i/d)), dimension 2i+1 the matching
    cosine. Positions run 0..length-1 and must stay below ``max_len``.
    """
    if length > max_len:
        raise ValueError(f"sequence length {length} exceeds max_len {max_len}")
    return encoding_for_positions(np.arange(length), d_model, max_len)


def encoding_for_positions(positions: np.ndarray, d_model: int, max_len: int = 512) -> np.ndarray:
    """Sinusoidal rows for explicit (possibly permuted) position indices."""
    positions = np.asarray(positions, dtype=np.float64)
    if positions.size and positions.max() >= max_len:
        raise ValueError(f"position {positions.max()} exceeds max_len {max_len}")
    out = np.zeros((positions.size, d_model))
    for i in range(0, d_model, 2):
        freq = 1.0 / 10000.0 ** (i / d_model)
        out[:, i] = np.sin(positions * freq)
        if i + 1 < d_model:
            out[:, i + 1] = np.cos(positions * freq)
    return out


@lru_cache(maxsize=None)
def causal_mask(length: int) -> np.ndarray:
    """Additive mask hiding positions j > i from query i (cached, read-only)."""
    mask = np.zeros((length, length))
    mask[np.triu_indices(length, k=1)] = MASK_VALUE
    mask.setflags(write=False)
    return mask


@lru_cache(maxsize=None)
def _default_encoding(length: int, d_model: int, max_len: int) -> np.ndarray:
    pe = encoding_for_positions(np.arange(length), d_model, max_len)
    pe.setflags(write=False)
    return pe


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class AttentionParams:
    """Q/K/V projections (bias-free) plus the output projection."""

    def __init__(self, prefix: str, d_model: int, rng: np.random.Generator):
        self.wq = Parameter(f"{prefix}.wq", glorot(rng, d_model, d_model))
        self.wk = Parameter(f"{prefix}.wk", glorot(rng, d_model, d_model))
        self.wv = Parameter(f"{prefix}.wv", glorot(rng, d_model, d_model))
        self.wo = Parameter(f"{prefix}.wo", glorot(rng, d_model, d_model))
        self.bo = Parameter(f"{prefix}.bo", np.zeros((1, d_model)))

    def parameters(self):
        return [self.wq, self.wk, self.wv, self.wo, self.bo]


class _FeedForwardParams:
    def __init__(self, prefix: str, d_model: int, d_ffn: int, rng: np.random.Generator):
        self.w1 = Parameter(f"{prefix}.w1", glorot(rng, d_model, d_ffn))
        self.b1 = Parameter(f"{prefix}.b1", np.zeros((1, d_ffn)))
        self.w2 = Parameter(f"{prefix}.w2", glorot(rng, d_ffn, d_model))
        self.b2 = Parameter(f"{prefix}.b2", np.zeros((1, d_model)))

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]


class _NormParams:
    def __init__(self, prefix: str, d_model: int):
        self.gain = Parameter(f"{prefix}.gain", np.ones((1, d_model)))
        self.bias = Parameter(f"{prefix}.bias", np.zeros((1, d_model)))

    def parameters(self):
        return [self.gain, self.bias]


class EncoderBlockParams:
    def __init__(self, prefix: str, cfg: TrajFormerConfig, rng: np.random.Generator):
        self.attn = AttentionParams(f"{prefix}.attn", cfg.d_model, rng)
        self.ln1 = _NormParams(f"{prefix}.ln1", cfg.d_model)
        self.ffn = _FeedForwardParams(f"{prefix}.ffn", cfg.d_model, cfg.d_ffn, rng)
        self.ln2 = _NormParams(f"{prefix}.ln2", cfg.d_model)

    def parameters(self):
        return self.attn.parameters() + self.ln1.parameters() + self.ffn.parameters() + self.ln2.parameters()


class DecoderBlockParams:
    def __init__(self, prefix: str, cfg: TrajFormerConfig, rng: np.random.Generator):
        self.self_attn = AttentionParams(f"{prefix}.self_attn", cfg.d_model, rng)
        self.ln1 = _NormParams(f"{prefix}.ln1", cfg.d_model)
        self.cross_attn = AttentionParams(f"{prefix}.cross_attn", cfg.d_model, rng)
        self.ln2 = _NormParams(f"{prefix}.ln2", cfg.d_model)
        self.ffn = _FeedForwardParams(f"{prefix}.ffn", cfg.d_model, cfg.d_ffn, rng)
        self.ln3 = _NormParams(f"{prefix}.ln3", cfg.d_model)

    def parameters(self):
        return (
            self.self_attn.parameters()
            + self.ln1.parameters()
            + self.cross_attn.parameters()
            + self.ln2.parameters()
            + self.ffn.parameters()
            + self.ln3.parameters()
        )


class EncoderState:
    def __init__(self, prefix: str, cfg: TrajFormerConfig, rng: np.random.Generator):
        self.blocks = [EncoderBlockParams(f"{prefix}.block{i}", cfg, rng) for i in range(cfg.n_layers)]

    def parameters(self):
        return [p for blk in self.blocks for p in blk.parameters()]


class DecoderState:
    def __init__(self, prefix: str, cfg: TrajFormerConfig, rng: np.random.Generator):
        self.blocks = [DecoderBlockParams(f"{prefix}.block{i}", cfg, rng) for i in range(cfg.n_layers)]

    def parameters(self):
        return [p for blk in self.blocks for p in blk.parameters()]


def _attend(q_src: Tensor, kv_src: Tensor, params: AttentionParams, n_heads: int, mask) -> Tensor:
    d_model = q_src.value.shape[1]
    d_head = d_model // n_heads
    q = matmul(q_src, params.wq)
    k = matmul(kv_src, params.wk)
    v = matmul(kv_src, params.wv)
    inv_sqrt_dk = 1.0 / math.sqrt(d_head)
    merged = None
    for h in range(n_heads):
        lo, hi = h * d_head, (h + 1) * d_head
        scores = scale(matmul(slice_cols(q, lo, hi), transpose(slice_cols(k, lo, hi))), inv_sqrt_dk)
        weights = softmax_rows(scores, mask)
        head = matmul(weights, slice_cols(v, lo, hi))
        merged = head if merged is None else concat_cols(merged, head)
    return linear(merged, params.wo, params.bo)


def _with_positions(x: Tensor, positions, max_len: int) -> Tensor:
    length, d_model = x.value.shape
    if positions is None:
        pe = _default_encoding(length, d_model, max_len)
    else:
        pe = encoding_for_positions(positions, d_model, max_len)
    return add(x, constant(pe))


def multi_head_self_attention(
    x: Tensor,
    params: AttentionParams,
    n_heads: int,
    positions=None,
    causal: bool = False,
    max_len: int = 512,
    extra_mask: np.ndarray | None = None,
) -> Tensor:
    """Self-attention with position encodings added before projection.

    ``extra_mask`` is an additional additive mask (e.g. block-diagonal for
    batched independent sequences), combined with the causal one.
    """
    xp = _with_positions(x, positions, max_len)
    mask = causal_mask(x.value.shape[0]) if causal else None
    if extra_mask is not None:
        mask = extra_mask if mask is None else mask + extra_mask
    return _attend(xp, xp, params, n_heads, mask)


def multi_head_cross_attention(
    y: Tensor,
    memory: Tensor,
    params: AttentionParams,
    n_heads: int,
    y_positions=None,
    m_positions=None,
    max_len: int = 512,
    extra_mask: np.ndarray | None = None,
) -> Tensor:
    """Cross-attention: queries from y, keys/values from the encoded memory."""
    yq = _with_positions(y, y_positions, max_len)
    mk = _with_positions(memory, m_positions, max_len)
    return _attend(yq, mk, params, n_heads, extra_mask)


def _feed_forward(x: Tensor, ffn: _FeedForwardParams) -> Tensor:
    return linear(relu(linear(x, ffn.w1, ffn.b1)), ffn.w2, ffn.b2)


def encoder_block(
    x: Tensor,
    blk: EncoderBlockParams,
    cfg: TrajFormerConfig,
    positions=None,
    extra_mask: np.ndarray | None = None,
) -> Tensor:
    attn = multi_head_self_attention(
        x, blk.attn, cfg.n_heads, positions, max_len=cfg.max_len, extra_mask=extra_mask
    )
    x1 = layer_norm(add(x, attn), blk.ln1.gain, blk.ln1.bias)
    return layer_norm(add(x1, _feed_forward(x1, blk.ffn)), blk.ln2.gain, blk.ln2.bias)


def decoder_block(
    y: Tensor,
    memory: Tensor,
    blk: DecoderBlockParams,
    cfg: TrajFormerConfig,
    y_positions=None,
    m_positions=None,
    self_extra_mask: np.ndarray | None = None,
    cross_mask: np.ndarray | None = None,
) -> Tensor:
    attn = multi_head_self_attention(
        y, blk.self_attn, cfg.n_heads, y_positions, causal=True, max_len=cfg.max_len,
        extra_mask=self_extra_mask,
    )
    y1 = layer_norm(add(y, attn), blk.ln1.gain, blk.ln1.bias)
    cross = multi_head_cross_attention(
        y1, memory, blk.cross_attn, cfg.n_heads, y_positions, m_positions, cfg.max_len,
        extra_mask=cross_mask,
    )
    y2 = layer_norm(add(y1, cross), blk.ln2.gain, blk.ln2.bias)
    return layer_norm(add(y2, _feed_forward(y2, blk.ffn)), blk.ln3.gain, blk.ln3.bias)


def run_encoder(
    x: Tensor,
    state: EncoderState,
    cfg: TrajFormerConfig,
    positions=None,
    extra_mask: np.ndarray | None = None,
) -> Tensor:
    for blk in state.blocks:
        x = encoder_block(x, blk, cfg, positions, extra_mask)
    return x


def run_decoder(
    y: Tensor,
    memory: Tensor,
    state: DecoderState,
    cfg: TrajFormerConfig,
    y_positions=None,
    m_positions=None,
    self_extra_mask: np.ndarray | None = None,
    cross_mask: np.ndarray | None = None,
) -> Tensor:
    for blk in state.blocks:
        y = decoder_block(y, memory, blk, cfg, y_positions, m_positions, self_extra_mask, cross_mask)
    return y

"""Multi-head self-attention and the post-norm Transformer encoder block."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError, DomainError
from .numerics import (
    NEG_INF,
    Tensor,
    dropout,
    get_dtype,
    glorot,
    layer_norm,
    masked_softmax,
    ones,
    relu,
    zeros,
)
from .params import ParamGroup


@dataclass
class AttentionParams(ParamGroup):
    Wq: Tensor
    Wk: Tensor
    Wv: Tensor
    Wo: Tensor
    heads: int

    @property
    def d(self) -> int:
        return self.Wq.shape[0]

    @property
    def head_dim(self) -> int:
        return self.d // self.heads


@dataclass
class EncoderBlockParams(ParamGroup):
    attn: AttentionParams
    ffn_W1: Tensor
    ffn_W2: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor

    @property
    def d(self) -> int:
        return self.attn.d


def init_attention(prefix: str, rng: np.random.Generator, d: int, heads: int) -> AttentionParams:
    if heads < 1 or d % heads:
        raise ConfigError(f"heads ({heads}) must divide d ({d})")
    ws = [glorot(f"{prefix}.{n}", rng, d, d) for n in ("Wq", "Wk", "Wv", "Wo")]
    return AttentionParams(*ws, heads=heads)


def init_encoder_block(prefix: str, rng: np.random.Generator, d: int, heads: int, d_ff: int) -> EncoderBlockParams:
    if d_ff < d:
        raise ConfigError(f"d_ff ({d_ff}) must be >= d ({d})")
    return EncoderBlockParams(
        attn=init_attention(f"{prefix}.attn", rng, d, heads),
        ffn_W1=glorot(f"{prefix}.ffn_W1", rng, d, d_ff),
        ffn_W2=glorot(f"{prefix}.ffn_W2", rng, d_ff, d),
        ln1_gain=ones(f"{prefix}.ln1_gain", (d,)),
        ln1_bias=zeros(f"{prefix}.ln1_bias", (d,)),
        ln2_gain=ones(f"{prefix}.ln2_gain", (d,)),
        ln2_bias=zeros(f"{prefix}.ln2_bias", (d,)),
    )


def encoder_block_param_count(d: int, d_ff: int) -> int:
    return 4 * d * d + 2 * d * d_ff + 4 * d


def build_additive_mask(valid_lengths: Sequence[int], width: int) -> np.ndarray:
    """Prefix mask: 0 where ``position < length``, ``NEG_INF`` elsewhere. Shape [batch, width]."""
    lengths = np.asarray(valid_lengths, dtype=np.int64)
    if lengths.ndim != 1:
        raise DimensionError(f"valid_lengths must be 1-D, got shape {lengths.shape}")
    if (lengths < 0).any() or (lengths > width).any():
        raise DimensionError(f"valid lengths {lengths.tolist()} must lie in [0, {width}]")
    valid = np.arange(width)[None, :] < lengths[:, None]
    return additive_mask(valid)


def additive_mask(valid: np.ndarray) -> np.ndarray:
    """Boolean validity array -> additive mask of the current float dtype."""
    return np.where(np.asarray(valid, dtype=bool), 0.0, NEG_INF).astype(get_dtype())


def multi_head_attention(
    x: Tensor,
    mask: np.ndarray,
    params: AttentionParams,
    query_valid: np.ndarray | None = None,
) -> Tensor:
    """Scaled dot-product self-attention over ``x`` [B, L, d] with key mask [B, L].

    Rows whose keys are all masked yield zero context (they hold no valid
    query). Dropout is applied by the caller, not to the attention weights.
    If ``query_valid`` is given, a valid query facing an all-masked key row
    raises :class:`DomainError`.
    """
    b, length, d = x.shape
    if d != params.d:
        raise DimensionError(f"input width {d} does not match attention width {params.d}")
    mask = np.asarray(mask)
    if mask.shape != (b, length):
        raise DimensionError(f"key mask shape {mask.shape} must be {(b, length)}")
    empty = (mask <= NEG_INF / 2).all(axis=1)
    if query_valid is not None and (empty & np.asarray(query_valid, dtype=bool).any(axis=1)).any():
        raise DomainError("attention: a valid query has no valid key")
    h, hd = params.heads, params.head_dim

    def split(t: Tensor) -> Tensor:
        return t.reshape(b, length, h, hd).transpose(0, 2, 1, 3)

    q = split(x @ params.Wq)
    k = split(x @ params.Wk)
    v = split(x @ params.Wv)
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(hd))
    weights = masked_softmax(scores, mask[:, None, None, :], allow_empty=True)
    ctx = (weights @ v).transpose(0, 2, 1, 3).reshape(b, length, d)
    return ctx @ params.Wo


def encoder_block_forward(
    x: Tensor,
    mask: np.ndarray,
    params: EncoderBlockParams,
    rate: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Post-norm block: ``y = LN(x + Drop(MHA(x)))``, ``out = LN(y + Drop(FFN(y)))``."""
    attn = multi_head_attention(x, mask, params.attn)
    y = layer_norm(x + dropout(attn, rate, training, rng), params.ln1_gain, params.ln1_bias)
    ffn = relu(y @ params.ffn_W1) @ params.ffn_W2
    return layer_norm(y + dropout(ffn, rate, training, rng), params.ln2_gain, params.ln2_bias)

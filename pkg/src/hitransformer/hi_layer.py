"""One Hi-Transformer layer: sentence pass, document pass, context propagation.

Hidden states keep a fixed layout ``[B, M, K+1, d]``; slot ``K`` of every
sentence holds its summary ([CLS]) state, so layers stack without reshaping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import EncoderBlockParams, additive_mask, encoder_block_forward, init_encoder_block
from .errors import ConfigError, DimensionError
from .numerics import Tensor, concat
from .params import ParamGroup


@dataclass
class HiddenStates:
    words: Tensor  # [B, M, K+1, d]
    word_mask: np.ndarray  # bool [B, M, K+1]
    sent_mask: np.ndarray  # bool [B, M]

    def __post_init__(self) -> None:
        b, m, k1, _ = self.words.shape
        if self.word_mask.shape != (b, m, k1) or self.sent_mask.shape != (b, m):
            raise DimensionError(
                f"masks {self.word_mask.shape}/{self.sent_mask.shape} do not match states {self.words.shape}"
            )

    @property
    def cls_slot(self) -> int:
        return self.words.shape[2] - 1

    def replace_words(self, words: Tensor) -> "HiddenStates":
        return HiddenStates(words, self.word_mask, self.sent_mask)


@dataclass
class HiLayerParams(ParamGroup):
    sent1: EncoderBlockParams
    doc: EncoderBlockParams
    sent2: EncoderBlockParams


def init_hi_layer(prefix: str, rng: np.random.Generator, d: int, heads: int, d_ff: int) -> HiLayerParams:
    return HiLayerParams(
        sent1=init_encoder_block(f"{prefix}.sent1", rng, d, heads, d_ff),
        doc=init_encoder_block(f"{prefix}.doc", rng, d, heads, d_ff),
        sent2=init_encoder_block(f"{prefix}.sent2", rng, d, heads, d_ff),
    )


def _per_sentence(words: Tensor, word_mask: np.ndarray, params: EncoderBlockParams, **drop) -> Tensor:
    b, m, k1, d = words.shape
    flat = words.reshape(b * m, k1, d)
    mask = additive_mask(word_mask.reshape(b * m, k1))
    return encoder_block_forward(flat, mask, params, **drop).reshape(b, m, k1, d)


def sentence_pass(h: HiddenStates, params: EncoderBlockParams, rate=0.0, training=False, rng=None) -> HiddenStates:
    """Run the encoder independently over each sentence's K+1 slots."""
    return h.replace_words(_per_sentence(h.words, h.word_mask, params, rate=rate, training=training, rng=rng))


def document_pass(
    h: HiddenStates, params: EncoderBlockParams, sent_pos_table: Tensor, rate=0.0, training=False, rng=None
) -> Tensor:
    """Sentence summaries plus sentence-position embeddings through the document encoder -> [B, M, d]."""
    m = h.words.shape[1]
    if m > sent_pos_table.shape[0]:
        raise ConfigError(f"{m} sentences exceed the sentence position table size {sent_pos_table.shape[0]}")
    summaries = h.words[:, :, h.cls_slot, :] + sent_pos_table[:m]
    return encoder_block_forward(summaries, additive_mask(h.sent_mask), params, rate, training, rng)


def with_summaries(h: HiddenStates, r: Tensor) -> HiddenStates:
    """Replace every sentence's [CLS] slot state with the matching row of ``r`` [B, M, d]."""
    b, m, _, d = h.words.shape
    if r.shape != (b, m, d):
        raise DimensionError(f"document states {r.shape} do not match {(b, m, d)}")
    words = concat([h.words[:, :, : h.cls_slot, :], r.reshape(b, m, 1, d)], axis=2)
    return h.replace_words(words)


def propagate_pass(
    h: HiddenStates, r: Tensor, params: EncoderBlockParams, rate=0.0, training=False, rng=None
) -> HiddenStates:
    """Second sentence encoder over ``[h_1..h_K, r_i]``: global context flows into word states."""
    return sentence_pass(with_summaries(h, r), params, rate, training, rng)


def hi_layer_forward(
    h: HiddenStates,
    params: HiLayerParams,
    sent_pos_table: Tensor,
    propagate: bool = True,
    rate=0.0,
    training=False,
    rng=None,
) -> HiddenStates:
    """sentence_pass -> document_pass -> propagate_pass.

    With ``propagate=False`` the propagation encoder is skipped and the
    document states simply replace the [CLS] slots.
    """
    drop = dict(rate=rate, training=training, rng=rng)
    local = sentence_pass(h, params.sent1, **drop)
    r = document_pass(local, params.doc, sent_pos_table, **drop)
    if propagate:
        return propagate_pass(local, r, params.sent2, **drop)
    return with_summaries(local, r)

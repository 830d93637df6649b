"""End-to-end classifiers: the hierarchical model and the flat Transformer baseline."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .attention import (
    EncoderBlockParams,
    build_additive_mask,
    encoder_block_forward,
    encoder_block_param_count,
    init_encoder_block,
)
from .config import ModelConfig
from .data import DocumentBatch, FlatBatch, LabeledDoc, Vocab, build_vocab, encode_and_pad, encode_flat, gen_synthetic_task
from .errors import ConfigError, DataError, DimensionError
from .hi_layer import HiddenStates, HiLayerParams, hi_layer_forward, init_hi_layer
from .numerics import (
    NEG_INF,
    GradcheckReport,
    finite_diff_gradcheck,
    precision,
    Tensor,
    concat,
    cross_entropy,
    dropout,
    embedding,
    get_dtype,
    glorot,
    masked_softmax,
    normal,
    parameter,
    tanh,
    zeros,
)
from .params import ParamGroup


@dataclass
class AttentivePoolParams(ParamGroup):
    W: Tensor  # [d, d]
    b: Tensor  # [d]
    q: Tensor  # [d]


@dataclass
class PoolParams(ParamGroup):
    word: AttentivePoolParams
    sent: AttentivePoolParams


@dataclass
class ClassifierParams(ParamGroup):
    W: Tensor
    b: Tensor


@dataclass
class EmbeddingParams(ParamGroup):
    word_table: Tensor  # [vocab, d] or [vocab, pretrained_dim]
    word_pos_table: Tensor  # [K_max + 1, d]; the last row is the [CLS] position
    cls_embedding: Tensor  # [d]
    sent_pos_table: Tensor  # [M_max, d]
    proj: Tensor | None = None  # [pretrained_dim, d]


@dataclass
class HiTransformerParams(ParamGroup):
    embed: EmbeddingParams
    layers: list[HiLayerParams]
    pool: PoolParams
    classifier: ClassifierParams


@dataclass
class FlatEmbeddingParams(ParamGroup):
    word_table: Tensor
    pos_table: Tensor  # [flat_max_len, d]
    proj: Tensor | None = None


@dataclass
class FlatTransformerParams(ParamGroup):
    embed: FlatEmbeddingParams
    blocks: list[EncoderBlockParams]
    pool: AttentivePoolParams
    classifier: ClassifierParams


# -- shared pieces -------------------------------------------------------------


def init_attentive_pool(prefix: str, rng: np.random.Generator, d: int) -> AttentivePoolParams:
    return AttentivePoolParams(
        W=glorot(f"{prefix}.W", rng, d, d),
        b=zeros(f"{prefix}.b", (d,)),
        q=glorot(f"{prefix}.q", rng, d, 1, shape=(d,)),
    )


def init_classifier(prefix: str, rng: np.random.Generator, d: int, num_classes: int) -> ClassifierParams:
    return ClassifierParams(glorot(f"{prefix}.W", rng, d, num_classes), zeros(f"{prefix}.b", (num_classes,)))


def _word_table(rng, cfg: ModelConfig, pretrained: np.ndarray | None):
    width = cfg.pretrained_dim or cfg.d
    if pretrained is not None:
        if pretrained.shape != (cfg.vocab_size, width):
            raise DimensionError(f"pretrained table {pretrained.shape} does not match {(cfg.vocab_size, width)}")
        table = parameter("embed.word_table", pretrained)
    else:
        table = normal("embed.word_table", rng, (cfg.vocab_size, width))
    proj = glorot("embed.proj", rng, cfg.pretrained_dim, cfg.d) if cfg.pretrained_dim else None
    return table, proj


def _lookup_words(ids: np.ndarray, table: Tensor, proj: Tensor | None) -> Tensor:
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        bad = np.argwhere((ids < 0) | (ids >= table.shape[0]))[0]
        raise DataError(f"document {bad[0]}: word id {ids[tuple(bad)]} outside vocabulary of {table.shape[0]}")
    e = embedding(table, ids)
    return e @ proj if proj is not None else e


def attentive_weights(x: Tensor, valid: np.ndarray, params: AttentivePoolParams, allow_empty: bool = False) -> Tensor:
    """softmax over valid positions of ``q . tanh(W x + b)``; shape [B, L]."""
    scores = (tanh(x @ params.W + params.b) @ params.q.reshape(-1, 1)).reshape(x.shape[0], x.shape[1])
    mask = np.where(np.asarray(valid, dtype=bool), 0.0, NEG_INF).astype(x.dtype)
    return masked_softmax(scores, mask, allow_empty=allow_empty)


def attentive_pool(x: Tensor, valid: np.ndarray, params: AttentivePoolParams, allow_empty: bool = False) -> Tensor:
    """Attention-weighted sum of ``x`` [B, L, d] over valid positions -> [B, d]."""
    b, length, d = x.shape
    w = attentive_weights(x, valid, params, allow_empty)
    return (w.reshape(b, 1, length) @ x).reshape(b, d)


def hierarchical_pool(h: HiddenStates, params: PoolParams) -> Tensor:
    """Pool word slots (including the [CLS] slot) into sentence vectors, then sentences into one vector."""
    b, m, k1, d = h.words.shape
    if not h.sent_mask.any(axis=1).all():
        empty = int(np.flatnonzero(~h.sent_mask.any(axis=1))[0])
        raise DataError(f"document {empty} has no sentences")
    if (h.sent_mask & ~h.word_mask.any(axis=2)).any():
        raise DataError("a real sentence has no valid word slot")
    sents = attentive_pool(h.words.reshape(b * m, k1, d), h.word_mask.reshape(b * m, k1), params.word, allow_empty=True)
    return attentive_pool(sents.reshape(b, m, d), h.sent_mask, params.sent)


def embed_document(
    batch: DocumentBatch, params: EmbeddingParams, rate: float = 0.0, training: bool = False, rng=None
) -> HiddenStates:
    """Word + in-sentence position embeddings; the [CLS] slot gets ``cls_embedding`` + the last position row."""
    ids = batch.word_ids
    b, m, k1 = ids.shape
    k = k1 - 1
    pos_rows = params.word_pos_table.shape[0]
    if k > pos_rows - 1:
        raise ConfigError(f"batch sentence width K={k} exceeds the model's K_max={pos_rows - 1}")
    words = _lookup_words(ids[:, :, :k], params.word_table, params.proj) + params.word_pos_table[:k]
    cls = (params.cls_embedding + params.word_pos_table[pos_rows - 1]).reshape(1, 1, 1, -1)
    cls = cls + Tensor(np.zeros((b, m, 1, 1), dtype=get_dtype()))
    x = concat([words, cls], axis=2)
    return HiddenStates(dropout(x, rate, training, rng), batch.word_mask, batch.sent_mask)


# -- models --------------------------------------------------------------------


class HiTransformer:
    """Hierarchical classifier: embeddings, stacked Hi-Transformer layers, hierarchical pooling, affine head."""

    kind = "hi"

    def __init__(self, config: ModelConfig, pretrained: np.ndarray | None = None):
        self.config = config
        rng = np.random.default_rng(config.seed)
        d = config.d
        table, proj = _word_table(rng, config, pretrained)
        embed = EmbeddingParams(
            word_table=table,
            word_pos_table=normal("embed.word_pos_table", rng, (config.k_max + 1, d)),
            cls_embedding=normal("embed.cls_embedding", rng, (d,)),
            sent_pos_table=normal("embed.sent_pos_table", rng, (config.m_max, d)),
            proj=proj,
        )
        layers = [init_hi_layer(f"layer{i}", rng, d, config.heads, config.d_ff) for i in range(config.layers)]
        pool = PoolParams(init_attentive_pool("pool.word", rng, d), init_attentive_pool("pool.sent", rng, d))
        self.tree = HiTransformerParams(embed, layers, pool, init_classifier("classifier", rng, d, config.num_classes))
        self.params = self.tree.named_parameters()
        self.dropout_rng = np.random.default_rng([config.seed, 1])

    def encode(self, docs: Sequence[LabeledDoc], vocab: Vocab) -> DocumentBatch:
        return encode_and_pad(docs, vocab, self.config.k_max, self.config.m_max, self.config.num_classes)

    def document_embedding(self, batch: DocumentBatch, training: bool = False) -> Tensor:
        cfg = self.config
        drop = dict(rate=cfg.dropout, training=training, rng=self.dropout_rng)
        h = embed_document(batch, self.tree.embed, **drop)
        for layer in self.tree.layers:
            h = hi_layer_forward(h, layer, self.tree.embed.sent_pos_table, cfg.use_context_propagation, **drop)
        return hierarchical_pool(h, self.tree.pool)

    def forward(self, batch: DocumentBatch, training: bool = False) -> Tensor:
        doc = self.document_embedding(batch, training)
        return doc @ self.tree.classifier.W + self.tree.classifier.b

    def loss(self, batch: DocumentBatch, training: bool = True) -> Tensor:
        return cross_entropy(self.forward(batch, training), batch.labels)


class FlatTransformer:
    """Vanilla Transformer over the concatenated token stream, truncated to ``flat_max_len``."""

    kind = "flat"

    def __init__(self, config: ModelConfig, pretrained: np.ndarray | None = None):
        self.config = config
        rng = np.random.default_rng(config.seed)
        d = config.d
        table, proj = _word_table(rng, config, pretrained)
        embed = FlatEmbeddingParams(table, normal("embed.pos_table", rng, (config.flat_max_len, d)), proj)
        blocks = [init_encoder_block(f"block{i}", rng, d, config.heads, config.d_ff) for i in range(config.layers)]
        pool = init_attentive_pool("pool", rng, d)
        self.tree = FlatTransformerParams(embed, blocks, pool, init_classifier("classifier", rng, d, config.num_classes))
        self.params = self.tree.named_parameters()
        self.dropout_rng = np.random.default_rng([config.seed, 1])

    def encode(self, docs: Sequence[LabeledDoc], vocab: Vocab) -> FlatBatch:
        return encode_flat(docs, vocab, self.config.flat_max_len, self.config.num_classes)

    def forward(self, batch: FlatBatch, training: bool = False) -> Tensor:
        cfg = self.config
        ids = batch.token_ids
        length = ids.shape[1]
        if length > cfg.flat_max_len:
            raise ConfigError(f"token stream of length {length} exceeds flat_max_len={cfg.flat_max_len}")
        emb = self.tree.embed
        x = _lookup_words(ids, emb.word_table, emb.proj) + emb.pos_table[:length]
        x = dropout(x, cfg.dropout, training, self.dropout_rng)
        mask = build_additive_mask(batch.lengths, length)
        for block in self.tree.blocks:
            x = encoder_block_forward(x, mask, block, cfg.dropout, training, self.dropout_rng)
        valid = np.arange(length)[None, :] < batch.lengths[:, None]
        doc = attentive_pool(x, valid, self.tree.pool)
        return doc @ self.tree.classifier.W + self.tree.classifier.b

    def loss(self, batch: FlatBatch, training: bool = True) -> Tensor:
        return cross_entropy(self.forward(batch, training), batch.labels)


def build_model(config: ModelConfig, pretrained: np.ndarray | None = None):
    return (FlatTransformer if config.flat else HiTransformer)(config, pretrained)


def _embedding_count(cfg: ModelConfig) -> int:
    if cfg.pretrained_dim:
        return cfg.vocab_size * cfg.pretrained_dim + cfg.pretrained_dim * cfg.d
    return cfg.vocab_size * cfg.d


def expected_param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count of the model built from ``cfg``."""
    d, c = cfg.d, cfg.num_classes
    block = encoder_block_param_count(d, cfg.d_ff)
    pool = d * d + 2 * d
    head = d * c + c
    if cfg.flat:
        return _embedding_count(cfg) + cfg.flat_max_len * d + cfg.layers * block + pool + head
    embed = _embedding_count(cfg) + (cfg.k_max + 1) * d + d + cfg.m_max * d
    return embed + cfg.layers * 3 * block + 2 * pool + head


def gradcheck_model(
    config: ModelConfig, seed: int = 0, n_docs: int = 2, max_coords: int | None = None, tol: float = 1e-4
) -> GradcheckReport:
    """Finite-difference check of every parameter gradient on a small synthetic batch.

    Runs in float64 with dropout off. ReLU activation patterns from the
    analytic pass are held fixed in the perturbed evaluations, and the
    difference quotients are Richardson-extrapolated (Ridders), so kinks and
    round-off do not masquerade as gradient bugs. ``max_coords`` caps the
    number of sampled coordinates per parameter (None checks them all).
    """
    docs = gen_synthetic_task(
        "keyword", n_docs, config.m_max, config.k_max, vocab_size=max(1, config.vocab_size - 10), seed=seed,
        flat_max_len=config.flat_max_len,
    )
    vocab = build_vocab(docs)
    if len(vocab) > config.vocab_size:
        raise ConfigError(f"vocab_size={config.vocab_size} too small for the check corpus ({len(vocab)} types)")
    with precision(np.float64):
        model = build_model(config)
        batch = model.encode(docs, vocab)
        return finite_diff_gradcheck(
            lambda: model.loss(batch, training=False),
            model.params,
            h=1e-3,
            tol=tol,
            max_coords=max_coords,
            seed=seed,
            method="ridders",
            freeze_relu=True,
        )

"""Scaled-down synthetic experiments: long-context keyword detection and the propagation ablation.

Both run end to end on one CPU core in minutes and return plain dicts so the
acceptance suite and ad-hoc scripts can print or assert on them.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .data import build_vocab, gen_synthetic_task
from .model import build_model
from .train_eval import TrainConfig, evaluate, train_epochs


@dataclass
class ExperimentSettings:
    n_train: int = 500
    n_test: int = 200
    m: int = 64
    k: int = 32
    filler_vocab: int = 200
    d: int = 32
    heads: int = 4
    layers: int = 1
    dropout: float = 0.0
    epochs: int = 3
    batch_size: int = 4
    lr: float = 1e-3
    flat_max_len: int = 512
    seed: int = 0


def _corpus(kind: str, s: ExperimentSettings, policy: str):
    # disjoint generator seeds for the two splits
    train = gen_synthetic_task(kind, s.n_train, s.m, s.k, s.filler_vocab, policy, s.seed * 2, s.flat_max_len)
    test = gen_synthetic_task(kind, s.n_test, s.m, s.k, s.filler_vocab, policy, s.seed * 2 + 1, s.flat_max_len)
    return train, test


def _model_config(s: ExperimentSettings, vocab_size: int, **overrides) -> ModelConfig:
    cfg = ModelConfig(
        d=s.d,
        heads=s.heads,
        layers=s.layers,
        k_max=s.k,
        m_max=s.m,
        vocab_size=vocab_size,
        num_classes=2,
        dropout=s.dropout,
        flat_max_len=s.flat_max_len,
        seed=s.seed,
    )
    return dataclasses.replace(cfg, **overrides)


def train_and_score(cfg: ModelConfig, train_docs, test_docs, s: ExperimentSettings, log=None) -> dict:
    vocab = build_vocab(train_docs)
    model = build_model(cfg)
    train, test = model.encode(train_docs, vocab), model.encode(test_docs, vocab)
    t0 = time.perf_counter()
    history = train_epochs(model, train, test, TrainConfig(s.epochs, s.batch_size, s.lr, s.seed), log=log)
    metrics = evaluate(model, test)
    return {
        "accuracy": metrics.accuracy,
        "macro_f": metrics.macro_f,
        "seconds": time.perf_counter() - t0,
        "history": history,
    }


def long_context_experiment(settings: ExperimentSettings | None = None, log=None) -> dict:
    """Keyword placed beyond token ``flat_max_len``: hierarchical model vs truncated flat baseline."""
    s = settings or ExperimentSettings()
    train_docs, test_docs = _corpus("keyword", s, "late")
    vocab_size = len(build_vocab(train_docs))
    out = {}
    for name, flat in (("hi", False), ("flat", True)):
        cfg = _model_config(s, vocab_size, flat=flat)
        out[name] = train_and_score(cfg, train_docs, test_docs, s, log)
    return out


def ablation_experiment(settings: ExperimentSettings | None = None, seeds=(0, 1, 2), log=None) -> dict:
    """Cross-sentence parity task, full model vs ``use_context_propagation=False``, averaged over seeds."""
    base = settings or ExperimentSettings(m=4, k=8, filler_vocab=10, n_train=2000, n_test=400, epochs=10)
    runs = {"full": [], "ablated": []}
    for seed in seeds:
        s = dataclasses.replace(base, seed=seed)
        train_docs, test_docs = _corpus("xor", s, "uniform")
        vocab_size = len(build_vocab(train_docs))
        for name, propagate in (("full", True), ("ablated", False)):
            cfg = _model_config(s, vocab_size, use_context_propagation=propagate)
            runs[name].append(train_and_score(cfg, train_docs, test_docs, s, log)["accuracy"])
    return {
        "full": runs["full"],
        "ablated": runs["ablated"],
        "full_mean": float(np.mean(runs["full"])),
        "ablated_mean": float(np.mean(runs["ablated"])),
        "gap_points": 100 * float(np.mean(runs["full"]) - np.mean(runs["ablated"])),
    }

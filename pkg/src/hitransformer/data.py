"""Corpus ingestion, vocabulary, padding into batches, synthetic tasks, embeddings."""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, ParseError, SchemaError

PAD, UNK, CLS = 0, 1, 2
RESERVED = ("<pad>", "<unk>", "<cls>")
TERMINATORS = ".!?"

_TOKEN_RE = re.compile(r"[^\W_]+")


@dataclass
class LabeledDoc:
    text: str
    label: int
    line: int | None = None


# -- text processing -----------------------------------------------------------


def split_sentences(text: str) -> list[str]:
    """Split after '.', '!' or '?' when followed by whitespace or end of text.

    Terminators stay attached; fragments are stripped and empty ones dropped.
    No abbreviation handling: "Mr. Smith" splits after "Mr.".
    """
    if not text or not text.strip():
        raise DataError("cannot split empty text into sentences")
    sentences = []
    start = 0
    n = len(text)
    for i, ch in enumerate(text):
        if ch in TERMINATORS and (i + 1 == n or text[i + 1].isspace()):
            sentences.append(text[start : i + 1])
            start = i + 1
    sentences.append(text[start:])
    return [s.strip() for s in sentences if s.strip()]


def tokenize(text: str) -> list[str]:
    """Lowercase alphanumeric runs."""
    return _TOKEN_RE.findall(text.lower())


# -- vocabulary ----------------------------------------------------------------


@dataclass
class Vocab:
    itos: list[str]
    min_count: int = 1
    stoi: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if tuple(self.itos[:3]) != RESERVED:
            raise DataError("vocabulary must start with the reserved tokens <pad>, <unk>, <cls>")
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    def __getitem__(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


def build_vocab(corpus: Iterable[str | LabeledDoc], min_count: int = 1) -> Vocab:
    """Ids by descending frequency, ties broken lexicographically, after the reserved ids."""
    counts: Counter[str] = Counter()
    n = 0
    for item in corpus:
        text = item.text if isinstance(item, LabeledDoc) else item
        counts.update(tokenize(text))
        n += 1
    if n == 0 or not counts:
        raise DataError("cannot build a vocabulary from an empty corpus")
    kept = sorted((tok for tok, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocab(list(RESERVED) + kept, min_count=min_count)


# -- batches -------------------------------------------------------------------


@dataclass
class DocumentBatch:
    word_ids: np.ndarray  # int64 [B, M, K+1], slot K holds CLS for real sentences
    word_mask: np.ndarray  # bool [B, M, K+1]
    sent_mask: np.ndarray  # bool [B, M]
    labels: np.ndarray  # int64 [B]
    n_sents: np.ndarray  # int64 [B], real sentences after truncation
    sent_lengths: np.ndarray  # int64 [B, M], real words per sentence after truncation

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def k_max(self) -> int:
        return self.word_ids.shape[2] - 1

    @property
    def m_max(self) -> int:
        return self.word_ids.shape[1]

    def take(self, idx) -> "DocumentBatch":
        return DocumentBatch(*(a[idx] for a in self._arrays()))

    def _arrays(self):
        return (self.word_ids, self.word_mask, self.sent_mask, self.labels, self.n_sents, self.sent_lengths)

    def pad_to(self, k_max: int, m_max: int) -> "DocumentBatch":
        """Widen to a larger K/M with extra padding; the [CLS] id moves to the new slot K."""
        b, m, k1 = self.word_ids.shape
        k = k1 - 1
        if k_max < k or m_max < m:
            raise ConfigError(f"pad_to({k_max}, {m_max}) cannot shrink a batch of K={k}, M={m}")
        ids = np.zeros((b, m_max, k_max + 1), dtype=np.int64)
        wmask = np.zeros((b, m_max, k_max + 1), dtype=bool)
        ids[:, :m, :k] = self.word_ids[:, :, :k]
        wmask[:, :m, :k] = self.word_mask[:, :, :k]
        ids[:, :m, k_max] = self.word_ids[:, :, k]
        wmask[:, :m, k_max] = self.word_mask[:, :, k]
        smask = np.zeros((b, m_max), dtype=bool)
        smask[:, :m] = self.sent_mask
        lengths = np.zeros((b, m_max), dtype=np.int64)
        lengths[:, :m] = self.sent_lengths
        return DocumentBatch(ids, wmask, smask, self.labels.copy(), self.n_sents.copy(), lengths)


@dataclass
class FlatBatch:
    token_ids: np.ndarray  # int64 [B, L]
    lengths: np.ndarray  # int64 [B]
    labels: np.ndarray  # int64 [B]

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx) -> "FlatBatch":
        return FlatBatch(self.token_ids[idx], self.lengths[idx], self.labels[idx])


def _check_label(doc: LabeledDoc, index: int, num_classes: int | None) -> None:
    if doc.label < 0 or (num_classes is not None and doc.label >= num_classes):
        where = f"line {doc.line}" if doc.line is not None else f"document {index}"
        raise DataError(f"{where}: label {doc.label} outside [0, {num_classes})")


def encode_and_pad(
    docs: Sequence[LabeledDoc], vocab: Vocab, k_max: int, m_max: int, num_classes: int | None = None
) -> DocumentBatch:
    """Keep the first ``k_max`` tokens of each of the first ``m_max`` sentences; CLS at slot ``k_max``."""
    if k_max < 1 or m_max < 1:
        raise ConfigError(f"k_max and m_max must be >= 1, got {k_max}, {m_max}")
    b = len(docs)
    ids = np.full((b, m_max, k_max + 1), PAD, dtype=np.int64)
    wmask = np.zeros((b, m_max, k_max + 1), dtype=bool)
    smask = np.zeros((b, m_max), dtype=bool)
    n_sents = np.zeros(b, dtype=np.int64)
    lengths = np.zeros((b, m_max), dtype=np.int64)
    labels = np.zeros(b, dtype=np.int64)
    for i, doc in enumerate(docs):
        _check_label(doc, i, num_classes)
        labels[i] = doc.label
        sentences = split_sentences(doc.text)[:m_max]
        n_sents[i] = len(sentences)
        for j, sentence in enumerate(sentences):
            tokens = vocab.encode(tokenize(sentence))[:k_max]
            ids[i, j, : len(tokens)] = tokens
            wmask[i, j, : len(tokens)] = True
            ids[i, j, k_max] = CLS
            wmask[i, j, k_max] = True
            smask[i, j] = True
            lengths[i, j] = len(tokens)
    return DocumentBatch(ids, wmask, smask, labels, n_sents, lengths)


def encode_flat(docs: Sequence[LabeledDoc], vocab: Vocab, max_len: int, num_classes: int | None = None) -> FlatBatch:
    """Concatenate each document's tokens in order and truncate to ``max_len``."""
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1, got {max_len}")
    b = len(docs)
    ids = np.full((b, max_len), PAD, dtype=np.int64)
    lengths = np.zeros(b, dtype=np.int64)
    labels = np.zeros(b, dtype=np.int64)
    for i, doc in enumerate(docs):
        _check_label(doc, i, num_classes)
        labels[i] = doc.label
        tokens = vocab.encode(tokenize(doc.text))[:max_len]
        if not tokens:
            raise DataError(f"document {i} has no tokens")
        ids[i, : len(tokens)] = tokens
        lengths[i] = len(tokens)
    return FlatBatch(ids, lengths, labels)


# -- files ---------------------------------------------------------------------


def load_jsonl_dataset(path) -> list[LabeledDoc]:
    """One ``{"label": int, "text": str}`` record per line; blank lines are skipped."""
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(record, dict):
                raise SchemaError(f"{path}:{lineno}: expected an object")
            for key in ("label", "text"):
                if key not in record:
                    raise SchemaError(f"{path}:{lineno}: missing field {key!r}")
            label, text = record["label"], record["text"]
            if not isinstance(label, int) or isinstance(label, bool):
                raise SchemaError(f"{path}:{lineno}: label must be an integer, got {label!r}")
            if not isinstance(text, str) or not text.strip():
                raise SchemaError(f"{path}:{lineno}: text must be a non-empty string")
            docs.append(LabeledDoc(text, label, lineno))
    if not docs:
        raise DataError(f"{path}: no records")
    return docs


def write_jsonl(docs: Iterable[LabeledDoc], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc in docs:
            fh.write(json.dumps({"label": doc.label, "text": doc.text}) + "\n")


@dataclass
class EmbeddingCoverage:
    found: int
    missing: list[str]

    @property
    def fraction(self) -> float:
        total = self.found + len(self.missing)
        return self.found / total if total else 0.0


def load_embedding_table(
    path, vocab: Vocab, dim: int = 300, seed: int = 0
) -> tuple[np.ndarray, EmbeddingCoverage]:
    """Read ``token v1 ... v_dim`` lines; rows for absent tokens are drawn from N(0, 0.02)."""
    rng = np.random.default_rng(seed)
    table = rng.normal(0.0, 0.02, size=(len(vocab), dim)).astype(np.float32)
    seen = np.zeros(len(vocab), dtype=bool)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                raise ParseError(f"{path}:{lineno}: expected {dim} values, found {len(parts) - 1}")
            idx = vocab.stoi.get(parts[0])
            if idx is None or idx < len(RESERVED):
                continue
            try:
                table[idx] = [float(v) for v in parts[1:]]
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric vector value") from None
            seen[idx] = True
    missing = [vocab.itos[i] for i in range(len(RESERVED), len(vocab)) if not seen[i]]
    return table, EmbeddingCoverage(int(seen.sum()), missing)


# -- statistics ----------------------------------------------------------------


def corpus_stats(docs: Sequence[LabeledDoc]) -> dict:
    """Document count, token and sentence totals and per-document means (pre-truncation), class count."""
    if not docs:
        raise DataError("corpus_stats needs at least one document")
    words = [len(tokenize(d.text)) for d in docs]
    sents = [len(split_sentences(d.text)) for d in docs]
    return {
        "n_docs": len(docs),
        "total_words": sum(words),
        "total_sents": sum(sents),
        "avg_words": sum(words) / len(docs),
        "avg_sents": sum(sents) / len(docs),
        "n_classes": len({d.label for d in docs}),
    }


def format_stats(stats: dict) -> str:
    return (
        f"n_docs={stats['n_docs']} avg_words={stats['avg_words']:.2f} "
        f"avg_sents={stats['avg_sents']:.2f} n_classes={stats['n_classes']}"
    )


# Full-scale corpus statistics of the benchmark datasets, for reference only.
REFERENCE_STATS = {
    "amazon": {"avg_words": 133.38, "avg_sents": 6.17, "n_classes": 5},
    "imdb": {"avg_words": 385.70, "avg_sents": 15.29, "n_classes": 10},
    "mind": {"avg_words": 505.46, "avg_sents": 25.14, "n_classes": 18},
}


# -- synthetic tasks -----------------------------------------------------------

KEYWORD = "signal"
XOR_TOKENS = ("alpha", "omega")


def _filler(rng: np.random.Generator, n: int, vocab_size: int) -> list[str]:
    return [f"w{i}" for i in rng.integers(0, vocab_size, size=n)]


def gen_synthetic_task(
    kind: str,
    n_docs: int,
    m: int,
    k: int,
    vocab_size: int = 200,
    signal_position_policy: str = "uniform",
    seed: int = 0,
    flat_max_len: int = 512,
) -> list[LabeledDoc]:
    """Generate a balanced binary corpus of ``m`` sentences with ``ceil(k/2)..k`` filler tokens each.

    ``keyword``: label 1 iff the token ``signal`` occurs, in one uniformly
    chosen sentence. Under policy ``late`` that occurrence always sits at a
    token index >= ``flat_max_len``.

    ``xor``: each of ``alpha`` and ``omega`` is present or absent; the label is
    their parity, and when both occur they sit in different sentences.
    """
    if kind not in ("keyword", "xor"):
        raise ConfigError(f"unknown synthetic task kind {kind!r}")
    if signal_position_policy not in ("uniform", "late"):
        raise ConfigError(f"unknown signal position policy {signal_position_policy!r}")
    if n_docs < 1 or m < 1 or k < 1 or vocab_size < 1:
        raise ConfigError("n_docs, m, k and vocab_size must be >= 1")
    min_len = math.ceil(k / 2)
    if signal_position_policy == "late" and m * min_len <= flat_max_len:
        raise ConfigError(f"M*ceil(K/2) = {m * min_len} cannot place a signal beyond token {flat_max_len}")
    if kind == "xor" and m < 2:
        raise ConfigError("xor task needs at least two sentences per document")

    rng = np.random.default_rng(seed)
    n_patterns = 2 if kind == "keyword" else 4
    patterns = rng.permutation(np.arange(n_docs) % n_patterns)
    docs = []
    for pattern in patterns:
        sentences = [_filler(rng, int(rng.integers(min_len, k + 1)), vocab_size) for _ in range(m)]
        if kind == "keyword":
            label = int(pattern)
            if label:
                _place(rng, sentences, KEYWORD, signal_position_policy, flat_max_len)
        else:
            has_a, has_b = bool(pattern & 1), bool(pattern & 2)
            label = int(has_a ^ has_b)
            chosen = rng.choice(m, size=2, replace=False)
            for flag, token, j in zip((has_a, has_b), XOR_TOKENS, chosen):
                if flag:
                    sentence = sentences[j]
                    sentence[int(rng.integers(len(sentence)))] = token
        text = " ".join(" ".join(s) + "." for s in sentences)
        docs.append(LabeledDoc(text, label))
    return docs


def _place(rng, sentences: list[list[str]], token: str, policy: str, flat_max_len: int) -> None:
    starts = np.cumsum([0] + [len(s) for s in sentences])
    if policy == "uniform":
        j = int(rng.integers(len(sentences)))
        sentences[j][int(rng.integers(len(sentences[j])))] = token
        return
    # sentences that reach past flat_max_len; pick one, then a slot at or beyond it
    eligible = [j for j in range(len(sentences)) if starts[j + 1] > flat_max_len]
    j = eligible[int(rng.integers(len(eligible)))]
    lo = max(0, flat_max_len - int(starts[j]))
    sentences[j][int(rng.integers(lo, len(sentences[j])))] = token

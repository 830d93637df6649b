"""Training loop and classification metrics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, InvariantError, NumericError
from .numerics import AdamState, adam_step, no_grad, zero_grad

HISTORY_COLUMNS = ("epoch", "train_loss", "val_accuracy", "val_macro_f")


@dataclass
class ClassScores:
    precision: float
    recall: float
    f1: float


@dataclass
class Metrics:
    accuracy: float
    macro_f: float
    per_class: list[ClassScores]
    n: int

    def to_text(self) -> str:
        lines = [f"accuracy={self.accuracy!r}", f"macro_f={self.macro_f!r}", f"n={self.n}"]
        for c, s in enumerate(self.per_class):
            lines += [f"class{c}_precision={s.precision!r}", f"class{c}_recall={s.recall!r}", f"class{c}_f1={s.f1!r}"]
        return "\n".join(lines) + "\n"


def evaluate_metrics(predictions, labels, num_classes: int) -> Metrics:
    """Accuracy and macro-F1; classes absent from both arrays count as F1 = 0."""
    preds = np.asarray(predictions, dtype=np.int64)
    gold = np.asarray(labels, dtype=np.int64)
    if preds.shape != gold.shape or preds.ndim != 1:
        raise DataError(f"predictions {preds.shape} and labels {gold.shape} must be equal-length 1-D arrays")
    if preds.size == 0:
        raise DataError("cannot score an empty prediction set")
    for name, arr in (("prediction", preds), ("label", gold)):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise DataError(f"{name} outside [0, {num_classes})")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (gold, preds), 1)
    tp = np.diag(confusion)
    per_class = []
    for c in range(num_classes):
        predicted, actual = confusion[:, c].sum(), confusion[c].sum()
        p = tp[c] / predicted if predicted else 0.0
        r = tp[c] / actual if actual else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        per_class.append(ClassScores(float(p), float(r), float(f1)))
    return Metrics(
        accuracy=float(tp.sum() / preds.size),
        macro_f=float(np.mean([s.f1 for s in per_class])),
        per_class=per_class,
        n=int(preds.size),
    )


@dataclass
class TrainConfig:
    epochs: int = 3
    batch_size: int = 16
    lr: float = 1e-4
    seed: int = 0


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float
    val_macro_f: float


@dataclass
class History:
    records: list[EpochRecord] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for r in self.records:
            writer.writerow([r.epoch, repr(r.train_loss), repr(r.val_accuracy), repr(r.val_macro_f)])
        return buf.getvalue()


def predict(model, batch, batch_size: int = 64) -> np.ndarray:
    """Argmax class per example (ties go to the lowest index), in eval mode."""
    out = []
    with no_grad():
        for start in range(0, len(batch), batch_size):
            logits = model.forward(batch.take(slice(start, start + batch_size)), training=False)
            out.append(np.argmax(logits.data, axis=1))
    return np.concatenate(out)


def evaluate(model, batch, batch_size: int = 64) -> Metrics:
    return evaluate_metrics(predict(model, batch, batch_size), batch.labels, model.config.num_classes)


def train_epochs(model, train, val, config: TrainConfig, state: AdamState | None = None, log=None) -> History:
    """Shuffle, step Adam per minibatch, and score ``val`` after every epoch.

    ``train``/``val`` are encoded batches (``DocumentBatch`` or ``FlatBatch``)
    matching the model. Everything is deterministic given ``config.seed``.
    """
    if len(train) == 0 or len(val) == 0:
        raise DataError("training and validation sets must be non-empty")
    num_classes = model.config.num_classes
    for name, batch in (("train", train), ("val", val)):
        if batch.labels.min() < 0 or batch.labels.max() >= num_classes:
            raise DataError(f"{name} labels outside [0, {num_classes})")
    state = state or AdamState(lr=config.lr)
    rng = np.random.default_rng(config.seed)
    history = History()
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        losses = []
        for start in range(0, len(train), config.batch_size):
            minibatch = train.take(order[start : start + config.batch_size])
            zero_grad(model.params)
            loss = model.loss(minibatch, training=True)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss {value} at epoch {epoch}, batch {start // config.batch_size}")
            loss.backward()
            try:
                adam_step(model.params, state)
            except InvariantError as exc:
                raise InvariantError(f"epoch {epoch}, batch {start // config.batch_size}: {exc}") from None
            losses.append(value)
            step += 1
        metrics = evaluate(model, val)
        record = EpochRecord(epoch, float(np.mean(losses)), metrics.accuracy, metrics.macro_f)
        history.records.append(record)
        if log is not None:
            log(f"epoch {epoch}: loss {record.train_loss:.4f} val_acc {record.val_accuracy:.4f} val_macro_f {record.val_macro_f:.4f}")
    return history

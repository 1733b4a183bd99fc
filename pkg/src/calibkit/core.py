"""Core domain types and logit-level primitives shared by all calibrators and metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np


@dataclass(frozen=True)
class LogitRecord:
    """One sample: raw logit vector plus its ground-truth label."""

    label: int
    logits: np.ndarray

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=float)
        object.__setattr__(self, "logits", logits)
        if logits.ndim != 1 or logits.shape[0] < 2:
            raise ValueError("logits must be a 1-D vector with at least 2 classes")
        if not np.all(np.isfinite(logits)):
            raise ValueError("logits must be finite")
        if not 0 <= self.label < logits.shape[0]:
            raise ValueError(f"label {self.label} out of range for {logits.shape[0]} classes")


@dataclass(frozen=True)
class Dataset:
    """A labelled logit dataset: labels (N,) and logits (N, C)."""

    labels: np.ndarray
    logits: np.ndarray
    # Known calibrated probabilities, attached by the synthetic generators.
    true_probs: Optional[np.ndarray] = None

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        logits = np.asarray(self.logits, dtype=float)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "logits", logits)
        if logits.ndim != 2:
            raise ValueError("logits must be a (N, C) array")
        n, c = logits.shape
        if n == 0:
            raise ValueError("dataset must be nonempty")
        if c < 2:
            raise ValueError("need at least 2 classes")
        if labels.shape != (n,):
            raise ValueError("labels must be a (N,) array matching logits")
        if not np.all(np.isfinite(logits)):
            raise ValueError("logits must be finite")
        if labels.min() < 0 or labels.max() >= c:
            raise ValueError("labels must lie in [0, num_classes)")
        if self.true_probs is not None:
            tp = np.asarray(self.true_probs, dtype=float)
            if tp.shape != (n, c):
                raise ValueError("true_probs must match logits shape")
            object.__setattr__(self, "true_probs", tp)

    @property
    def num_classes(self) -> int:
        return self.logits.shape[1]

    def __len__(self) -> int:
        return self.logits.shape[0]

    @classmethod
    def from_records(cls, records: Sequence[LogitRecord]) -> "Dataset":
        if not records:
            raise ValueError("dataset must be nonempty")
        c = records[0].logits.shape[0]
        for r in records:
            if r.logits.shape[0] != c:
                raise ValueError("all records must share the same number of classes")
        return cls(
            labels=np.array([r.label for r in records], dtype=np.int64),
            logits=np.stack([r.logits for r in records]),
        )

    def records(self) -> Iterable[LogitRecord]:
        for i in range(len(self)):
            yield LogitRecord(label=int(self.labels[i]), logits=self.logits[i])

    def subset(self, indices: np.ndarray) -> "Dataset":
        tp = self.true_probs[indices] if self.true_probs is not None else None
        return Dataset(labels=self.labels[indices], logits=self.logits[indices], true_probs=tp)


@dataclass(frozen=True)
class PredictionRecord:
    """Top-label view of one (possibly calibrated) prediction."""

    predicted_class: int
    confidence: float
    correct: bool


@dataclass(frozen=True)
class Predictions:
    """Vectorized stack of PredictionRecords used by every metric."""

    predicted_class: np.ndarray
    confidence: np.ndarray
    correct: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "predicted_class", np.asarray(self.predicted_class, dtype=np.int64))
        object.__setattr__(self, "confidence", np.asarray(self.confidence, dtype=float))
        object.__setattr__(self, "correct", np.asarray(self.correct, dtype=bool))
        n = self.confidence.shape[0]
        if self.predicted_class.shape != (n,) or self.correct.shape != (n,):
            raise ValueError("prediction arrays must have matching lengths")

    def __len__(self) -> int:
        return self.confidence.shape[0]

    @classmethod
    def from_records(cls, records: Sequence[PredictionRecord]) -> "Predictions":
        return cls(
            predicted_class=np.array([r.predicted_class for r in records], dtype=np.int64),
            confidence=np.array([r.confidence for r in records], dtype=float),
            correct=np.array([r.correct for r in records], dtype=bool),
        )

    @classmethod
    def from_probs(cls, probs: np.ndarray, labels: np.ndarray) -> "Predictions":
        probs = np.asarray(probs, dtype=float)
        labels = np.asarray(labels, dtype=np.int64)
        pred = np.argmax(probs, axis=1)
        conf = probs[np.arange(probs.shape[0]), pred]
        return cls(predicted_class=pred, confidence=conf, correct=pred == labels)

    def to_records(self) -> list[PredictionRecord]:
        return [
            PredictionRecord(int(p), float(c), bool(k))
            for p, c, k in zip(self.predicted_class, self.confidence, self.correct)
        ]


PredictionsLike = Union[Predictions, Sequence[PredictionRecord]]


def as_predictions(preds: PredictionsLike) -> Predictions:
    if isinstance(preds, Predictions):
        return preds
    return Predictions.from_records(list(preds))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable (max-shifted) softmax along the last axis."""
    z = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax input must be finite")
    shifted = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(shifted)
    return ez / ez.sum(axis=-1, keepdims=True)


def top_label(probs: np.ndarray) -> tuple[int, float]:
    """Index and value of the maximum entry; ties broken by lowest index."""
    p = np.asarray(probs, dtype=float)
    idx = int(np.argmax(p))
    return idx, float(p[idx])


def sorted_topk(logits: np.ndarray, k: int) -> np.ndarray:
    """The k largest logits in decreasing order.

    If there are fewer than k classes, the tail is padded with the smallest
    selected logit so the output always has length exactly k.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    z = np.asarray(logits, dtype=float)
    top = np.sort(z)[::-1][:k]
    if top.shape[0] < k:
        top = np.concatenate([top, np.full(k - top.shape[0], top[-1])])
    return top


def sorted_topk_matrix(logits: np.ndarray, k: int) -> np.ndarray:
    """Row-wise sorted_topk for a (N, C) logit matrix."""
    if k < 1:
        raise ValueError("k must be >= 1")
    z = np.asarray(logits, dtype=float)
    top = np.sort(z, axis=1)[:, ::-1][:, :k]
    if top.shape[1] < k:
        pad = np.repeat(top[:, -1:], k - top.shape[1], axis=1)
        top = np.concatenate([top, pad], axis=1)
    return top

"""Softmax regression on TF-IDF rows, trained with seeded mini-batch gradient descent."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from doccat.corpus import LABELS, N_CLASSES, Label
from doccat.vectorize import TfidfVector, Vocabulary, vectors_to_csr


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class LRHyperparams:
    learning_rate: float = 0.1
    epochs: int = 30
    batch_size: int = 64
    l2: float = 1e-4
    class_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    seed: int = 0

    def as_dict(self) -> dict:
        d = asdict(self)
        d["class_weights"] = list(self.class_weights)
        return d


@dataclass(frozen=True)
class LRModel:
    weights: np.ndarray  # (3, V)
    bias: np.ndarray  # (3,)
    vocab: Vocabulary
    hyperparams: LRHyperparams = field(default_factory=LRHyperparams)

    model_type = "logreg"

    def logits(self, X) -> np.ndarray:
        return np.asarray(X @ self.weights.T) + self.bias


def class_weights_from_counts(class_counts: Sequence[int]) -> tuple[float, float, float]:
    counts = [int(c) for c in class_counts]
    if len(counts) != N_CLASSES:
        raise ValueError(f"expected {N_CLASSES} class counts")
    if min(counts) < 1:
        raise ValueError("every class count must be >= 1")
    n = sum(counts)
    return tuple(n / (N_CLASSES * c) for c in counts)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def loss_and_grad(W, b, X, y, class_weights, l2):
    """Weighted cross-entropy (normalized by the batch's total weight) plus 0.5*l2*|W|^2.

    Returns (objective, dW, db, weighted CE sum). The bias is not penalized.
    """
    y = np.asarray(y, dtype=np.int64)
    sw = np.asarray(class_weights, dtype=np.float64)[y]
    logits = np.asarray(X @ W.T) + b
    logp = log_softmax(logits)
    ce = -logp[np.arange(len(y)), y]
    wsum = float(sw.sum())
    obj = float(sw @ ce) / wsum + 0.5 * l2 * float(np.sum(W * W))
    delta = np.exp(logp)
    delta[np.arange(len(y)), y] -= 1.0
    delta *= (sw / wsum)[:, None]
    dW = np.asarray(delta.T @ X) if not sp.issparse(X) else np.asarray((sp.csr_matrix(delta.T) @ X).todense())
    dW = dW + l2 * W
    db = delta.sum(axis=0)
    return obj, dW, db, float(sw @ ce)


def fit_matrix(X, y, vocab: Vocabulary, hp: LRHyperparams = LRHyperparams()) -> tuple[LRModel, list[float]]:
    if hp.learning_rate <= 0:
        raise ValueError("learning_rate must be > 0")
    if hp.batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if min(hp.class_weights) <= 0:
        raise ValueError("class weights must be > 0")
    y = np.asarray(y, dtype=np.int64)
    n_c = np.bincount(y, minlength=N_CLASSES)
    if (n_c == 0).any():
        missing = [LABELS[c].title for c in np.flatnonzero(n_c == 0)]
        raise ValueError(f"training data has no documents for {', '.join(missing)}")
    X = sp.csr_matrix(X)
    n, V = X.shape
    W = np.zeros((N_CLASSES, V))
    b = np.zeros(N_CLASSES)
    rng = np.random.default_rng(hp.seed)
    history: list[float] = []
    for epoch in range(hp.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, hp.batch_size):
            idx = order[start : start + hp.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                _, dW, db, wce = loss_and_grad(W, b, X[idx], y[idx], hp.class_weights, hp.l2)
                if not np.isfinite(wce) or not np.isfinite(dW).all():
                    raise TrainingError(f"non-finite loss at epoch {epoch + 1}")
                total += wce
                W -= hp.learning_rate * dW
                b -= hp.learning_rate * db
        history.append(total / n)
    return LRModel(W, b, vocab, hp), history


def lr_train(data: Sequence[tuple[TfidfVector, Label]], hp: LRHyperparams, vocab: Vocabulary):
    X = vectors_to_csr([v for v, _ in data], len(vocab))
    return fit_matrix(X, np.array([int(l) for _, l in data]), vocab, hp)


def lr_predict(model: LRModel, vector: TfidfVector) -> tuple[Label, np.ndarray]:
    logits = model.bias + model.weights[:, vector.indices] @ vector.values
    probs = softmax(logits)
    return Label(int(np.argmax(probs))), probs

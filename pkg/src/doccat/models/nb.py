"""Multinomial Naive Bayes over bag-of-words counts, Laplace/Lidstone smoothed."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from doccat.corpus import LABELS, N_CLASSES, Label
from doccat.vectorize import CountVector, Vocabulary, vectors_to_csr


@dataclass(frozen=True)
class NBModel:
    class_log_prior: np.ndarray  # (3,)
    token_log_likelihood: np.ndarray  # (3, V)
    alpha: float
    vocab: Vocabulary

    model_type = "nb"

    def scores(self, X: sp.spmatrix | np.ndarray) -> np.ndarray:
        """Per-class log posterior (up to a per-row constant) for a batch of count rows."""
        return np.asarray(X @ self.token_log_likelihood.T) + self.class_log_prior


def fit_counts(X: sp.spmatrix | np.ndarray, y: np.ndarray, alpha: float, vocab: Vocabulary) -> NBModel:
    if alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    y = np.asarray(y, dtype=np.int64)
    n_c = np.bincount(y, minlength=N_CLASSES)
    if (n_c == 0).any():
        missing = [LABELS[c].title for c in np.flatnonzero(n_c == 0)]
        raise ValueError(f"training data has no documents for {', '.join(missing)}")
    onehot = sp.csr_matrix((np.ones(len(y)), (y, np.arange(len(y)))), shape=(N_CLASSES, len(y)))
    token_counts = np.asarray((onehot @ X).todense() if sp.issparse(X) else onehot @ X)
    V = token_counts.shape[1]
    smoothed = token_counts + alpha
    loglik = np.log(smoothed) - np.log(token_counts.sum(axis=1, keepdims=True) + alpha * V)
    prior = np.log(n_c) - np.log(n_c.sum())
    return NBModel(prior, loglik, float(alpha), vocab)


def nb_train(vectors: Sequence[tuple[CountVector, Label]], alpha: float, vocab: Vocabulary) -> NBModel:
    X = vectors_to_csr([v for v, _ in vectors], len(vocab))
    return fit_counts(X, np.array([int(l) for _, l in vectors]), alpha, vocab)


def argmax_lowest(scores: np.ndarray) -> np.ndarray:
    # np.argmax already returns the first maximal index
    return np.argmax(scores, axis=-1)


def nb_predict(model: NBModel, vector: CountVector) -> tuple[Label, np.ndarray]:
    scores = model.class_log_prior + model.token_log_likelihood[:, vector.indices] @ vector.values
    return Label(int(argmax_lowest(scores))), scores


def posterior(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)

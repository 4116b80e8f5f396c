"""Vocabulary building and the three document representations used by the models."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

PAD = 0
UNK = 1
N_RESERVED = 2

DEFAULT_MIN_DF = 2
DEFAULT_MAX_SIZE = 50_000
DEFAULT_MAX_LEN = 200


def _tokens(doc) -> list[str]:
    if isinstance(doc, str):
        return doc.split()
    return list(doc.tokens)


@dataclass(frozen=True)
class Vocabulary:
    index_to_token: tuple[str, ...]
    doc_freq: np.ndarray
    total_docs: int

    def __post_init__(self):
        object.__setattr__(self, "token_to_index", {t: i for i, t in enumerate(self.index_to_token)})

    def __len__(self) -> int:
        return len(self.index_to_token)

    @property
    def idf(self) -> np.ndarray:
        return np.log((1.0 + self.total_docs) / (1.0 + self.doc_freq)) + 1.0

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Vocabulary)
            and self.index_to_token == other.index_to_token
            and self.total_docs == other.total_docs
            and np.array_equal(self.doc_freq, other.doc_freq)
        )

    __hash__ = None


def build_vocab(train_docs: Sequence, min_df: int = DEFAULT_MIN_DF, max_size: int = DEFAULT_MAX_SIZE) -> Vocabulary:
    """Keep tokens seen in at least `min_df` training documents, capped at `max_size`.

    Over the cap, the highest document frequencies win and ties go to the
    lexicographically smaller token. Indices follow that same order.
    """
    if not train_docs:
        raise ValueError("cannot build a vocabulary from zero documents")
    if min_df < 1 or max_size < 1:
        raise ValueError("min_df and max_size must be >= 1")
    df: Counter[str] = Counter()
    for doc in train_docs:
        df.update(set(_tokens(doc)))
    kept = sorted((t for t, c in df.items() if c >= min_df), key=lambda t: (-df[t], t))[:max_size]
    if not kept:
        raise ValueError(f"no token has document frequency >= {min_df}")
    return Vocabulary(tuple(kept), np.array([df[t] for t in kept], dtype=np.int64), len(train_docs))


@dataclass(frozen=True)
class SparseVector:
    indices: np.ndarray
    values: np.ndarray
    dim: int

    def pairs(self) -> list[tuple[int, float]]:
        return list(zip(self.indices.tolist(), self.values.tolist()))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    def __len__(self) -> int:
        return len(self.indices)


class CountVector(SparseVector):
    pass


class TfidfVector(SparseVector):
    pass


def bow_counts(doc, vocab: Vocabulary) -> CountVector:
    index = vocab.token_to_index
    counts = Counter(index[t] for t in _tokens(doc) if t in index)
    idx = np.array(sorted(counts), dtype=np.int64)
    return CountVector(idx, np.array([counts[i] for i in idx.tolist()], dtype=np.float64), len(vocab))


def tfidf_transform(counts: CountVector, vocab: Vocabulary) -> TfidfVector:
    if len(counts) == 0:
        return TfidfVector(counts.indices.copy(), counts.values.copy(), counts.dim)
    w = counts.values * vocab.idf[counts.indices]
    norm = math.sqrt(float(np.dot(w, w)))
    return TfidfVector(counts.indices.copy(), w / norm, counts.dim)


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray
    true_length: int


def encode_sequence(doc, vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> TokenSequence:
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    index = vocab.token_to_index
    toks = _tokens(doc)[:max_len]
    ids = np.zeros(max_len, dtype=np.int64)
    ids[: len(toks)] = [index[t] + N_RESERVED if t in index else UNK for t in toks]
    return TokenSequence(ids, len(toks))


def decode_sequence(seq: TokenSequence, vocab: Vocabulary) -> list[str]:
    """Inverse of encode_sequence for in-vocabulary positions (PAD and UNK dropped)."""
    return [vocab.index_to_token[i - N_RESERVED] for i in seq.ids[: seq.true_length].tolist() if i >= N_RESERVED]


# Batch helpers for the models. These build exactly what the per-document
# transforms above produce, stacked into matrices.

def count_matrix(docs: Iterable, vocab: Vocabulary) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    n = 0
    for n, doc in enumerate(docs, start=1):
        v = bow_counts(doc, vocab)
        rows.extend([n - 1] * len(v))
        cols.extend(v.indices.tolist())
        vals.extend(v.values.tolist())
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, len(vocab)), dtype=np.float64)


def tfidf_matrix(docs: Iterable, vocab: Vocabulary) -> sp.csr_matrix:
    m = count_matrix(docs, vocab)
    m = m @ sp.diags(vocab.idf)
    norms = np.sqrt(np.asarray(m.multiply(m).sum(axis=1)).ravel())
    norms[norms == 0] = 1.0
    return sp.csr_matrix(sp.diags(1.0 / norms) @ m)


def sequence_matrix(docs: Iterable, vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> tuple[np.ndarray, np.ndarray]:
    seqs = [encode_sequence(d, vocab, max_len) for d in docs]
    if not seqs:
        return np.zeros((0, max_len), dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.stack([s.ids for s in seqs]), np.array([s.true_length for s in seqs], dtype=np.int64)


def vectors_to_csr(vectors: Sequence[SparseVector], dim: int) -> sp.csr_matrix:
    indptr = np.cumsum([0] + [len(v) for v in vectors])
    idx = np.concatenate([v.indices for v in vectors]) if vectors else np.zeros(0, dtype=np.int64)
    val = np.concatenate([v.values for v in vectors]) if vectors else np.zeros(0)
    return sp.csr_matrix((val, idx, indptr), shape=(len(vectors), dim))

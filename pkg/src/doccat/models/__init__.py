"""Uniform fit/predict entry points over the three model families."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Mapping, Sequence, Union

import numpy as np

from doccat.corpus import N_CLASSES, CleanDocument, Label
from doccat.models.bilstm import BiLSTMConfig, BiLSTMModel, bilstm_predict, fit_arrays, predict_proba
from doccat.models.logreg import LRHyperparams, LRModel, class_weights_from_counts, fit_matrix, softmax
from doccat.models.nb import NBModel, fit_counts, posterior
from doccat.vectorize import (
    DEFAULT_MAX_SIZE,
    DEFAULT_MIN_DF,
    build_vocab,
    count_matrix,
    sequence_matrix,
    tfidf_matrix,
)

TrainedModel = Union[NBModel, LRModel, BiLSTMModel]
MODEL_TYPES = ("nb", "logreg", "bilstm")


@dataclass(frozen=True)
class NBConfig:
    alpha: float = 1.0


@dataclass(frozen=True)
class LRConfig(LRHyperparams):
    # None: inverse-frequency weights from the training data; "balanced" is the default
    class_weights: tuple[float, float, float] | None = None


@dataclass(frozen=True)
class VocabSettings:
    min_df: int = DEFAULT_MIN_DF
    max_size: int = DEFAULT_MAX_SIZE


@dataclass(frozen=True)
class ModelSpec:
    model_type: str
    hyper: object
    vocab: VocabSettings = VocabSettings()

    def as_dict(self) -> dict:
        hp = {f.name: getattr(self.hyper, f.name) for f in fields(self.hyper)}
        hp = {k: list(v) if isinstance(v, tuple) else v for k, v in hp.items()}
        return {"model_type": self.model_type, "hyper": hp, "vocab": vars(self.vocab).copy()}


_HYPER_CLASSES = {"nb": NBConfig, "logreg": LRConfig, "bilstm": BiLSTMConfig}


def _coerce(value, default, name):
    if not isinstance(value, str):
        return value
    v = value.strip()
    if name == "class_weights":
        if v.lower() in ("none", "auto", ""):
            return None
        if v.lower() in ("off", "uniform"):
            return (1.0, 1.0, 1.0)
        return tuple(float(x) for x in v.replace("x", ",").split(","))
    if name == "hidden_sizes":
        return tuple(int(x) for x in v.replace("x", ",").split(",") if x)
    if isinstance(default, bool):
        return v.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(v)
    if isinstance(default, float):
        return float(v)
    return v


def make_spec(model_type: str, params: Mapping[str, object] | None = None, seed: int | None = None) -> ModelSpec:
    """Build a ModelSpec from flat key/value overrides (strings are parsed)."""
    if model_type not in _HYPER_CLASSES:
        raise ValueError(f"unknown model type {model_type!r}; expected one of {', '.join(MODEL_TYPES)}")
    params = dict(params or {})
    cls = _HYPER_CLASSES[model_type]
    defaults = {f.name: f.default for f in fields(cls)}
    vocab_kw = {}
    for key in ("min_df", "max_size"):
        if key in params:
            vocab_kw[key] = int(params.pop(key))
    unknown = set(params) - set(defaults)
    if unknown:
        raise ValueError(f"unknown {model_type} parameter(s): {', '.join(sorted(unknown))}")
    kw = {k: _coerce(v, defaults[k], k) for k, v in params.items()}
    if seed is not None and "seed" in defaults:
        kw["seed"] = seed
    return ModelSpec(model_type, cls(**kw), VocabSettings(**vocab_kw))


def fit(spec: ModelSpec, docs: Sequence[CleanDocument], log=None) -> TrainedModel:
    """Fit vocabulary and model on `docs` only."""
    vocab = build_vocab(docs, spec.vocab.min_df, spec.vocab.max_size)
    y = np.array([int(d.label) for d in docs], dtype=np.int64)
    hp = spec.hyper
    if spec.model_type == "nb":
        return fit_counts(count_matrix(docs, vocab), y, hp.alpha, vocab)
    if spec.model_type == "logreg":
        if hp.class_weights is None:
            hp = replace(hp, class_weights=class_weights_from_counts(np.bincount(y, minlength=N_CLASSES)))
        base = LRHyperparams(**{f.name: getattr(hp, f.name) for f in fields(LRHyperparams)})
        model, _ = fit_matrix(tfidf_matrix(docs, vocab), y, vocab, base)
        return model
    if spec.model_type == "bilstm":
        ids, lengths = sequence_matrix(docs, vocab, hp.max_len)
        model, _ = fit_arrays(ids, lengths, y, len(vocab), hp, vocab, log=log)
        return model
    raise ValueError(f"unknown model type {spec.model_type!r}")


def predict_docs(model: TrainedModel, docs: Sequence) -> tuple[np.ndarray, np.ndarray]:
    """Labels (int array) and class probabilities (n x 3) for cleaned documents or texts."""
    if len(docs) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, N_CLASSES))
    if isinstance(model, NBModel):
        scores = model.scores(count_matrix(docs, model.vocab))
        return np.argmax(scores, axis=1), posterior(scores)
    if isinstance(model, LRModel):
        logits = model.logits(tfidf_matrix(docs, model.vocab))
        return np.argmax(logits, axis=1), softmax(logits)
    if isinstance(model, BiLSTMModel):
        probs = predict_proba(model, sequence_matrix(docs, model.vocab, model.config.max_len))
        return np.argmax(probs, axis=1), probs
    raise TypeError(f"not a trained model: {type(model).__name__}")


__all__ = [
    "BiLSTMConfig",
    "BiLSTMModel",
    "LRConfig",
    "LRHyperparams",
    "LRModel",
    "MODEL_TYPES",
    "ModelSpec",
    "NBConfig",
    "NBModel",
    "TrainedModel",
    "VocabSettings",
    "bilstm_predict",
    "fit",
    "make_spec",
    "predict_docs",
]

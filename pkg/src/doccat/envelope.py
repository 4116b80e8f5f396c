"""Single-file model envelope shared by all model families.

The file is one line of canonical JSON (sorted keys, no whitespace, ASCII)
followed by a newline. Arrays are stored as base64 of their little-endian,
row-major bytes with explicit dtype and shape. ``fingerprint`` is the SHA-256
of the canonical serialization of every other field. Loading rejects any
file whose bytes are not exactly the canonical re-serialization of its own
content, so every byte is covered by either the hash or that check.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from doccat.models import BiLSTMConfig, BiLSTMModel, LRHyperparams, LRModel, NBModel, TrainedModel
from doccat.models.bilstm import param_names
from doccat.vectorize import Vocabulary

FORMAT_VERSION = 1


class EnvelopeError(ValueError):
    pass


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True, allow_nan=False)


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a)
    dtype = "float64" if a.dtype.kind == "f" else "int64"
    data = a.astype("<f8" if dtype == "float64" else "<i8").tobytes()
    return {"dtype": dtype, "shape": list(a.shape), "data": base64.b64encode(data).decode("ascii")}


def _decode_array(d: dict) -> np.ndarray:
    dt = {"float64": "<f8", "int64": "<i8"}.get(d["dtype"])
    if dt is None:
        raise EnvelopeError(f"unsupported array dtype {d['dtype']!r}")
    raw = base64.b64decode(d["data"], validate=True)
    a = np.frombuffer(raw, dtype=dt)
    shape = tuple(int(s) for s in d["shape"])
    if a.size != int(np.prod(shape)):
        raise EnvelopeError("array data does not match its declared shape")
    return a.reshape(shape).astype(np.float64 if d["dtype"] == "float64" else np.int64)


def _created_at() -> str:
    # Reproducible by default: the timestamp comes from SOURCE_DATE_EPOCH when set, else the epoch.
    epoch = int(os.environ.get("SOURCE_DATE_EPOCH", "0"))
    return datetime.fromtimestamp(epoch, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def to_envelope(model: TrainedModel, dataset_hash: str = "") -> dict:
    vocab = model.vocab
    if isinstance(model, NBModel):
        hyper = {"alpha": model.alpha}
        arrays = {"class_log_prior": model.class_log_prior, "token_log_likelihood": model.token_log_likelihood}
    elif isinstance(model, LRModel):
        hyper = model.hyperparams.as_dict()
        arrays = {"weights": model.weights, "bias": model.bias}
    elif isinstance(model, BiLSTMModel):
        hyper = model.config.as_dict()
        arrays = dict(model.params)
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    body = {
        "format_version": FORMAT_VERSION,
        "model_type": model.model_type,
        "created_at": _created_at(),
        "dataset_hash": dataset_hash,
        "vocabulary": {
            "tokens": list(vocab.index_to_token),
            "doc_freq": _encode_array(vocab.doc_freq),
            "total_docs": vocab.total_docs,
        },
        "hyperparameters": hyper,
        "arrays": {name: _encode_array(a) for name, a in arrays.items()},
    }
    body["fingerprint"] = hashlib.sha256(canonical(body).encode("ascii")).hexdigest()
    return body


def dumps(model: TrainedModel, dataset_hash: str = "") -> bytes:
    return (canonical(to_envelope(model, dataset_hash)) + "\n").encode("ascii")


def save(model: TrainedModel, path: str | Path, dataset_hash: str = "") -> str:
    data = dumps(model, dataset_hash)
    Path(path).write_bytes(data)
    return json.loads(data)["fingerprint"]


def loads(data: bytes) -> tuple[TrainedModel, dict]:
    """Verify and decode an envelope; returns (model, envelope metadata without arrays)."""
    try:
        text = data.decode("ascii")
        env = json.loads(text)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise EnvelopeError(f"not a model envelope: {exc}") from None
    if not isinstance(env, dict):
        raise EnvelopeError("not a model envelope")
    if env.get("format_version") != FORMAT_VERSION:
        raise EnvelopeError(f"unsupported format_version {env.get('format_version')!r}")
    if text != canonical(env) + "\n":
        raise EnvelopeError("envelope is not in canonical form (file altered?)")
    body = {k: v for k, v in env.items() if k != "fingerprint"}
    if hashlib.sha256(canonical(body).encode("ascii")).hexdigest() != env.get("fingerprint"):
        raise EnvelopeError("fingerprint mismatch (file corrupted or altered)")
    try:
        model = _build(env)
    except (KeyError, TypeError, ValueError) as exc:
        raise EnvelopeError(f"malformed envelope: {exc}") from None
    meta = {k: env[k] for k in ("format_version", "model_type", "created_at", "dataset_hash", "fingerprint")}
    meta["hyperparameters"] = env["hyperparameters"]
    return model, meta


def load(path: str | Path) -> tuple[TrainedModel, dict]:
    return loads(Path(path).read_bytes())


def _build(env: dict) -> TrainedModel:
    v = env["vocabulary"]
    vocab = Vocabulary(tuple(v["tokens"]), _decode_array(v["doc_freq"]), int(v["total_docs"]))
    arrays = {k: _decode_array(a) for k, a in env["arrays"].items()}
    hp = env["hyperparameters"]
    kind = env["model_type"]
    V = len(vocab)
    if kind == "nb":
        model = NBModel(arrays["class_log_prior"], arrays["token_log_likelihood"], float(hp["alpha"]), vocab)
        expect = {"class_log_prior": (3,), "token_log_likelihood": (3, V)}
    elif kind == "logreg":
        hp = dict(hp, class_weights=tuple(hp["class_weights"]))
        model = LRModel(arrays["weights"], arrays["bias"], vocab, LRHyperparams(**hp))
        expect = {"weights": (3, V), "bias": (3,)}
    elif kind == "bilstm":
        config = BiLSTMConfig(**hp)
        params = {name: arrays[name] for name in param_names(config)}
        model = BiLSTMModel(params, config, vocab)
        expect = {"embedding": (V + 2, config.embedding_dim)}
    else:
        raise EnvelopeError(f"unknown model_type {kind!r}")
    for name, shape in expect.items():
        if arrays[name].shape != shape:
            raise EnvelopeError(f"array {name} has shape {arrays[name].shape}, expected {shape}")
    return model

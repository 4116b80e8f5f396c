"""Bidirectional LSTM text classifier in plain numpy.

Embedding -> stacked BiLSTM layers -> mean over non-PAD positions -> linear
softmax head. Gradients come from hand-written backpropagation through time.
Gate blocks are stacked in the order i, f, g, o along the first axis of each
W (4H x D_in), U (4H x H) and b (4H,).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict, replace
from typing import Sequence

import numpy as np

from doccat.corpus import LABELS, N_CLASSES, Label, stratified_split
from doccat.models.logreg import TrainingError, class_weights_from_counts, log_softmax, softmax
from doccat.vectorize import N_RESERVED, PAD, TokenSequence, Vocabulary

DIRECTIONS = ("fw", "bw")


@dataclass(frozen=True)
class BiLSTMConfig:
    hidden_sizes: tuple[int, ...] = (128,)
    embedding_dim: int = 64
    batch_size: int = 64
    max_epochs: int = 20
    patience: int = 2
    learning_rate: float = 0.05
    seed: int = 0
    max_len: int = 200
    # None: derive inverse-frequency weights from the training split
    class_weights: tuple[float, float, float] | None = None
    clip_norm: float = 5.0
    validation_fraction: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.class_weights is not None:
            object.__setattr__(self, "class_weights", tuple(float(w) for w in self.class_weights))
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            raise ValueError("hidden_sizes must be a non-empty list of positive sizes")
        for name in ("embedding_dim", "batch_size", "max_epochs", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        d["class_weights"] = None if self.class_weights is None else list(self.class_weights)
        return d


@dataclass
class BiLSTMModel:
    params: dict[str, np.ndarray]
    config: BiLSTMConfig
    vocab: Vocabulary | None = None

    model_type = "bilstm"

    @property
    def n_layers(self) -> int:
        return len(self.config.hidden_sizes)

    def copy(self) -> "BiLSTMModel":
        return BiLSTMModel({k: v.copy() for k, v in self.params.items()}, self.config, self.vocab)


@dataclass
class EpochRecord:
    train_loss: float
    val_loss: float
    val_accuracy: float
    seconds: float


@dataclass
class TrainingHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0
    class_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)


def param_names(config: BiLSTMConfig) -> list[str]:
    names = ["embedding"]
    for layer in range(len(config.hidden_sizes)):
        for d in DIRECTIONS:
            names += [f"l{layer}.{d}.W", f"l{layer}.{d}.U", f"l{layer}.{d}.b"]
    return names + ["head.W", "head.b"]


def _uniform(rng, shape, fan_in, fan_out):
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


def init_params(config: BiLSTMConfig, vocab_size: int, vocab: Vocabulary | None = None) -> BiLSTMModel:
    """Glorot-uniform weights per gate matrix, zero biases except forget gate = 1, zero PAD row."""
    if vocab_size < 1:
        raise ValueError("vocab_size must be >= 1")
    rng = np.random.default_rng(config.seed)
    rows = vocab_size + N_RESERVED
    E = config.embedding_dim
    p: dict[str, np.ndarray] = {}
    p["embedding"] = _uniform(rng, (rows, E), rows, E)
    p["embedding"][PAD] = 0.0
    d_in = E
    for layer, H in enumerate(config.hidden_sizes):
        for d in DIRECTIONS:
            W = np.concatenate([_uniform(rng, (H, d_in), d_in, H) for _ in range(4)])
            U = np.concatenate([_uniform(rng, (H, H), H, H) for _ in range(4)])
            b = np.zeros(4 * H)
            b[H : 2 * H] = 1.0
            p[f"l{layer}.{d}.W"], p[f"l{layer}.{d}.U"], p[f"l{layer}.{d}.b"] = W, U, b
        d_in = 2 * H
    p["head.W"] = _uniform(rng, (N_CLASSES, d_in), d_in, N_CLASSES)
    p["head.b"] = np.zeros(N_CLASSES)
    return BiLSTMModel(p, config, vocab)


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def _run_direction(X, mask, W, U, b, order):
    """One LSTM direction over positions in `order`; rows past their length keep a zero state."""
    B = X.shape[0]
    H = U.shape[1]
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    out = np.zeros((B, X.shape[1], H))
    XW = X @ W.T + b  # (B, T, 4H), input projection hoisted out of the loop
    steps = []
    for t in order:
        a = XW[:, t] + h @ U.T
        i = _sigmoid(a[:, :H])
        f = _sigmoid(a[:, H : 2 * H])
        g = np.tanh(a[:, 2 * H : 3 * H])
        o = _sigmoid(a[:, 3 * H :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        m = mask[:, t, None]
        steps.append((t, h, c, i, f, g, o, tc, m))
        out[:, t] = np.where(m, h_new, 0.0)
        h = np.where(m, h_new, h)
        c = np.where(m, c_new, c)
    return out, steps


def _backprop_direction(dOut, X, W, U, steps):
    H = U.shape[1]
    B = dOut.shape[0]
    dW = np.zeros_like(W)
    dU = np.zeros_like(U)
    db = np.zeros(W.shape[0])
    dX = np.zeros_like(X)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t, h_prev, c_prev, i, f, g, o, tc, m in reversed(steps):
        dh_new = np.where(m, dh_next + dOut[:, t], 0.0)
        dc_new = np.where(m, dc_next, 0.0) + dh_new * o * (1.0 - tc * tc)
        da = np.concatenate(
            [
                dc_new * g * i * (1.0 - i),
                dc_new * c_prev * f * (1.0 - f),
                dc_new * i * (1.0 - g * g),
                dh_new * tc * o * (1.0 - o),
            ],
            axis=1,
        )
        dW += da.T @ X[:, t]
        dU += da.T @ h_prev
        db += da.sum(axis=0)
        dX[:, t] = da @ W
        dh_next = da @ U + np.where(m, 0.0, dh_next)
        dc_next = dc_new * f + np.where(m, 0.0, dc_next)
    return dW, dU, db, dX


def _as_arrays(batch, max_len):
    if isinstance(batch, tuple) and len(batch) == 2 and isinstance(batch[0], np.ndarray):
        ids, lengths = batch
    else:
        batch = list(batch)
        if not batch:
            raise ValueError("empty batch")
        ids = np.stack([s.ids for s in batch])
        lengths = np.array([s.true_length for s in batch], dtype=np.int64)
    if ids.ndim != 2 or ids.shape[1] != max_len:
        raise ValueError(f"sequence length {ids.shape[-1]} does not match configured max_len {max_len}")
    if len(ids) == 0:
        raise ValueError("empty batch")
    return np.asarray(ids, dtype=np.int64), np.asarray(lengths, dtype=np.int64)


def forward(model: BiLSTMModel, batch) -> tuple[np.ndarray, dict]:
    """Logits (B, 3) for a batch of TokenSequences (or an (ids, lengths) pair)."""
    ids, lengths = _as_arrays(batch, model.config.max_len)
    p = model.params
    # columns past the longest sequence are pure PAD and never read
    T = max(int(lengths.max()), 1)
    ids = ids[:, :T]
    mask = np.arange(T)[None, :] < lengths[:, None]
    X = p["embedding"][ids]
    layers = []
    for layer in range(model.n_layers):
        outs = []
        caches = []
        for d in DIRECTIONS:
            order = range(T) if d == "fw" else range(T - 1, -1, -1)
            out, steps = _run_direction(X, mask, p[f"l{layer}.{d}.W"], p[f"l{layer}.{d}.U"], p[f"l{layer}.{d}.b"], order)
            outs.append(out)
            caches.append(steps)
        layers.append((X, caches))
        X = np.concatenate(outs, axis=2)
    denom = np.maximum(lengths, 1).astype(np.float64)[:, None]
    rep = X.sum(axis=1) / denom
    logits = rep @ p["head.W"].T + p["head.b"]
    return logits, {"ids": ids, "mask": mask, "layers": layers, "top": X, "rep": rep, "denom": denom}


def representation(model: BiLSTMModel, batch) -> np.ndarray:
    return forward(model, batch)[1]["rep"]


def _backward(model, cache, dlogits):
    p = model.params
    grads: dict[str, np.ndarray] = {}
    grads["head.W"] = dlogits.T @ cache["rep"]
    grads["head.b"] = dlogits.sum(axis=0)
    drep = dlogits @ p["head.W"]
    mask = cache["mask"]
    dX = np.where(mask[:, :, None], (drep / cache["denom"])[:, None, :], 0.0)
    for layer in reversed(range(model.n_layers)):
        X_in, caches = cache["layers"][layer]
        H = model.config.hidden_sizes[layer]
        dIn = np.zeros_like(X_in)
        for k, d in enumerate(DIRECTIONS):
            dOut = dX[:, :, k * H : (k + 1) * H]
            W, U = p[f"l{layer}.{d}.W"], p[f"l{layer}.{d}.U"]
            dW, dU, db, dXd = _backprop_direction(dOut, X_in, W, U, caches[k])
            grads[f"l{layer}.{d}.W"], grads[f"l{layer}.{d}.U"], grads[f"l{layer}.{d}.b"] = dW, dU, db
            dIn += dXd
        dX = dIn
    # embedding gradient as (row ids, row grads); PAD row stays fixed
    ids = cache["ids"]
    flat_ids = ids[mask]
    rows, inverse = np.unique(flat_ids, return_inverse=True)
    row_grads = np.zeros((len(rows), dX.shape[2]))
    np.add.at(row_grads, inverse, dX[mask])
    keep = rows != PAD
    return grads, (rows[keep], row_grads[keep])


def _weighted_loss(logits, labels, class_weights):
    labels = np.asarray(labels, dtype=np.int64)
    sw = np.asarray(class_weights, dtype=np.float64)[labels]
    logp = log_softmax(logits)
    B = len(labels)
    loss = float(np.sum(sw * -logp[np.arange(B), labels])) / B
    dlogits = np.exp(logp)
    dlogits[np.arange(B), labels] -= 1.0
    dlogits *= (sw / B)[:, None]
    return loss, dlogits


def _loss_and_sparse_grads(model, batch, labels, class_weights):
    logits, cache = forward(model, batch)
    if len(labels) != len(logits):
        raise ValueError("labels and batch differ in length")
    loss, dlogits = _weighted_loss(logits, labels, class_weights)
    if not np.isfinite(loss):
        raise TrainingError("non-finite loss")
    grads, emb = _backward(model, cache, dlogits)
    return loss, grads, emb


def loss_and_grads(model: BiLSTMModel, batch, labels, class_weights=(1.0, 1.0, 1.0)):
    """Mean class-weighted cross-entropy and dense gradients for every parameter."""
    loss, grads, (rows, row_grads) = _loss_and_sparse_grads(model, batch, labels, class_weights)
    dE = np.zeros_like(model.params["embedding"])
    dE[rows] = row_grads
    grads["embedding"] = dE
    return loss, grads


def _sgd_step(model, grads, emb, lr, clip_norm):
    rows, row_grads = emb
    sq = sum(float(np.sum(g * g)) for g in grads.values()) + float(np.sum(row_grads * row_grads))
    norm = np.sqrt(sq)
    scale = lr * (clip_norm / norm if clip_norm and norm > clip_norm else 1.0)
    for name, g in grads.items():
        model.params[name] -= scale * g
    model.params["embedding"][rows] -= scale * row_grads


def predict_proba(model: BiLSTMModel, batch, chunk: int = 256) -> np.ndarray:
    ids, lengths = _as_arrays(batch, model.config.max_len)
    out = [softmax(forward(model, (ids[s : s + chunk], lengths[s : s + chunk]))[0]) for s in range(0, len(ids), chunk)]
    return np.concatenate(out)


def bilstm_predict(model: BiLSTMModel, sequences) -> tuple[list[Label], np.ndarray]:
    probs = predict_proba(model, sequences)
    return [Label(int(k)) for k in np.argmax(probs, axis=1)], probs


def evaluate_loss(model, ids, lengths, labels, class_weights, chunk: int = 256) -> tuple[float, float]:
    total = 0.0
    correct = 0
    for s in range(0, len(ids), chunk):
        logits, _ = forward(model, (ids[s : s + chunk], lengths[s : s + chunk]))
        loss, _ = _weighted_loss(logits, labels[s : s + chunk], class_weights)
        total += loss * len(logits)
        correct += int(np.sum(np.argmax(logits, axis=1) == labels[s : s + chunk]))
    return total / len(ids), correct / len(ids)


def fit_arrays(
    ids: np.ndarray,
    lengths: np.ndarray,
    labels: np.ndarray,
    vocab_size: int,
    config: BiLSTMConfig,
    vocab: Vocabulary | None = None,
    validation: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
    log=None,
) -> tuple[BiLSTMModel, TrainingHistory]:
    """Train on pre-encoded sequences, holding out a stratified validation split.

    Early stopping follows the usual rule: an epoch that does not lower the best
    validation loss increments a counter, reset by any improvement; training
    stops once `patience` misses have accumulated (patience=0 stops at the
    first miss). The returned model holds the best epoch's parameters.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if validation is None:
        tr, va = stratified_split([Label(int(l)) for l in labels], config.validation_fraction, config.seed)
        validation = (ids[va], lengths[va], labels[va])
        ids, lengths, labels = ids[tr], lengths[tr], labels[tr]
    v_ids, v_len, v_lab = validation
    for name, lab in (("training", labels), ("validation", v_lab)):
        counts = np.bincount(lab, minlength=N_CLASSES)
        if len(lab) == 0 or (counts == 0).any():
            raise TrainingError(f"degenerate split: {name} split lacks a class (counts {counts.tolist()})")
    weights = config.class_weights or class_weights_from_counts(np.bincount(labels, minlength=N_CLASSES))
    model = init_params(config, vocab_size, vocab)
    rng = np.random.default_rng([config.seed, 1])
    history = TrainingHistory(class_weights=tuple(weights))
    best = None
    best_loss = np.inf
    wait = 0
    n = len(labels)
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            try:
                loss, grads, emb = _loss_and_sparse_grads(model, (ids[idx], lengths[idx]), labels[idx], weights)
            except TrainingError:
                raise TrainingError(f"non-finite loss at epoch {epoch}") from None
            _sgd_step(model, grads, emb, config.learning_rate, config.clip_norm)
            total += loss * len(idx)
        val_loss, val_acc = evaluate_loss(model, v_ids, v_len, v_lab, weights)
        if not np.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        rec = EpochRecord(total / n, val_loss, val_acc, time.perf_counter() - t0)
        history.epochs.append(rec)
        history.stopped_epoch = epoch
        if log:
            log(f"epoch {epoch}: train {rec.train_loss:.4f} val {val_loss:.4f} acc {val_acc:.4f} ({rec.seconds:.1f}s)")
        if val_loss < best_loss:
            best_loss = val_loss
            best = model.copy()
            history.best_epoch = epoch
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                break
    return best, history


def bilstm_train(
    sequences: Sequence[TokenSequence],
    labels: Sequence[Label],
    config: BiLSTMConfig,
    vocab: Vocabulary,
    validation_fraction: float | None = None,
    log=None,
) -> tuple[BiLSTMModel, TrainingHistory]:
    if validation_fraction is not None:
        config = replace(config, validation_fraction=validation_fraction)
    ids, lengths = _as_arrays(sequences, config.max_len)
    return fit_arrays(ids, lengths, np.array([int(l) for l in labels]), len(vocab), config, vocab, log=log)

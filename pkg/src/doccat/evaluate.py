"""Confusion matrices, per-class metrics, repeated k-fold CV and throughput benchmarks."""

from __future__ import annotations

import hashlib
import json
import platform
import time
from fractions import Fraction
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from doccat.corpus import LABELS, N_CLASSES, Dataset, Label, assign_folds
from doccat.models import ModelSpec, TrainedModel, fit, make_spec, predict_docs

REPORT_VERSION = 1


def confusion(golds: Sequence[int], preds: Sequence[int]) -> np.ndarray:
    """3x3 counts, rows = true class, columns = predicted class."""
    if len(golds) != len(preds):
        raise ValueError(f"length mismatch: {len(golds)} golds vs {len(preds)} predictions")
    if len(golds) == 0:
        raise ValueError("nothing to evaluate")
    m = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(m, (np.asarray(golds, dtype=np.int64), np.asarray(preds, dtype=np.int64)), 1)
    return m


@dataclass(frozen=True)
class Metrics:
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]
    accuracy: float
    macro_f1: float
    # per class, the names of any quantities that were 0/0 and reported as 0
    degenerate: tuple[tuple[str, ...], ...]

    def as_dict(self) -> dict:
        return {
            "precision": list(self.precision),
            "recall": list(self.recall),
            "f1": list(self.f1),
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "degenerate": [list(d) for d in self.degenerate],
        }


def _ratio(num: int, den: int) -> tuple[Fraction, bool]:
    return (Fraction(0), True) if den == 0 else (Fraction(num, den), False)


def metrics(matrix: np.ndarray) -> Metrics:
    """Per-class precision/recall/F1, accuracy and macro-F1.

    Computed in exact rational arithmetic and rounded once, so every value is
    the correctly rounded float of its defining formula.
    """
    m = np.asarray(matrix, dtype=np.int64)
    total = int(m.sum())
    if total < 1:
        raise ValueError("confusion matrix is empty")
    prec, rec, f1, flags = [], [], [], []
    for c in range(N_CLASSES):
        tp = int(m[c, c])
        fp = int(m[:, c].sum()) - tp
        fn = int(m[c, :].sum()) - tp
        p, p_bad = _ratio(tp, tp + fp)
        r, r_bad = _ratio(tp, tp + fn)
        # harmonic mean of p and r, which is 2TP / (2TP + FP + FN) whenever p + r > 0
        f, f_bad = _ratio(2 * tp, 2 * tp + fp + fn) if p + r else (Fraction(0), True)
        prec.append(p)
        rec.append(r)
        f1.append(f)
        flags.append(tuple(n for n, bad in (("precision", p_bad), ("recall", r_bad), ("f1", f_bad)) if bad))
    return Metrics(
        tuple(map(float, prec)),
        tuple(map(float, rec)),
        tuple(map(float, f1)),
        float(Fraction(int(np.trace(m)), total)),
        float(sum(f1) / N_CLASSES),
        tuple(flags),
    )


class MajorityModel:
    """Constant predictor for the most frequent training class (baseline)."""

    model_type = "majority"

    def __init__(self, label: int):
        self.label = label


class FoldError(RuntimeError):
    def __init__(self, repeat: int, fold: int, cause: Exception):
        super().__init__(f"repeat {repeat}, fold {fold}: {cause}")
        self.repeat, self.fold, self.cause = repeat, fold, cause


def derive_seed(seed: int, repeat: int) -> int:
    digest = hashlib.sha256(f"model:{seed}:{repeat}".encode()).digest()
    return int.from_bytes(digest[:4], "big") & 0x7FFFFFFF


@dataclass
class FoldResult:
    repeat: int
    fold: int
    matrix: np.ndarray
    n_train: int
    n_test: int
    train_seconds: float = 0.0
    predict_seconds: float = 0.0

    @property
    def metrics(self) -> Metrics:
        return metrics(self.matrix)


@dataclass
class EvaluationReport:
    config: dict
    folds: list[FoldResult] = field(default_factory=list)

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([f.metrics.accuracy for f in self.folds])

    def aggregate(self) -> dict:
        ms = [f.metrics for f in self.folds]
        accs = self.accuracies
        pooled = np.sum([f.matrix for f in self.folds], axis=0)
        std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
        per_class = {}
        for c, label in enumerate(LABELS):
            per_class[label.title] = {
                key: float(np.mean([getattr(m, key)[c] for m in ms])) for key in ("precision", "recall", "f1")
            }
        return {
            "accuracy_mean": float(np.mean(accs)),
            "accuracy_std": std,
            "pooled_accuracy": int(np.trace(pooled)) / int(pooled.sum()),
            "macro_f1_mean": float(np.mean([m.macro_f1 for m in ms])),
            "per_class": per_class,
            "pooled_matrix": pooled.tolist(),
        }

    def best_fold(self) -> FoldResult:
        accs = self.accuracies
        return self.folds[int(np.argmax(accs))]

    def to_dict(self, include_timings: bool = False) -> dict:
        folds = []
        for f in self.folds:
            d = {"repeat": f.repeat, "fold": f.fold, "n_train": f.n_train, "n_test": f.n_test, "matrix": f.matrix.tolist()}
            if include_timings:
                d["train_seconds"] = f.train_seconds
                d["predict_seconds"] = f.predict_seconds
            folds.append(d)
        best = self.best_fold()
        return {
            "report_version": REPORT_VERSION,
            "config": self.config,
            "folds": folds,
            "aggregate": self.aggregate(),
            "best_fold": {"repeat": best.repeat, "fold": best.fold, "metrics": best.metrics.as_dict()},
        }

    def to_json(self, include_timings: bool = False) -> str:
        return json.dumps(self.to_dict(include_timings), indent=2, sort_keys=True) + "\n"

    def timings_json(self) -> str:
        rows = [
            {"repeat": f.repeat, "fold": f.fold, "train_seconds": f.train_seconds, "predict_seconds": f.predict_seconds}
            for f in self.folds
        ]
        mean_train = float(np.mean([f.train_seconds for f in self.folds]))
        return json.dumps({"mean_train_seconds": mean_train, "folds": rows}, indent=2) + "\n"

    def render(self) -> str:
        agg = self.aggregate()
        cfg = self.config
        lines = [
            f"model {cfg['model']['model_type']}  k={cfg['k']}  repeats={cfg['repeats']}  seed={cfg['seed']}  "
            f"stratified={cfg['stratified']}",
            f"accuracy {agg['accuracy_mean']:.4f} +/- {agg['accuracy_std']:.4f}  "
            f"(pooled {agg['pooled_accuracy']:.4f}, macro-F1 {agg['macro_f1_mean']:.4f})",
            "",
            "Mean per-class metrics",
            metrics_table([agg["per_class"][l.title] for l in LABELS]),
        ]
        best = self.best_fold()
        bm = best.metrics
        lines += [
            "",
            f"Best fold (repeat {best.repeat}, fold {best.fold}, accuracy {bm.accuracy:.4f})",
            metrics_table([{"precision": bm.precision[c], "recall": bm.recall[c], "f1": bm.f1[c]} for c in range(N_CLASSES)]),
        ]
        return "\n".join(lines) + "\n"


def metrics_table(rows: Sequence[dict]) -> str:
    out = [f"{'Class':<10}{'Precision':>11}{'Recall':>9}{'F1':>7}"]
    for label, r in zip(LABELS, rows):
        out.append(f"{label.title:<10}{r['precision']:>11.2f}{r['recall']:>9.2f}{r['f1']:>7.2f}")
    return "\n".join(out)


class LeakageError(AssertionError):
    pass


def _check_no_leakage(model, train_docs, test_ids: set[int]) -> None:
    if test_ids.intersection(d.doc_id for d in train_docs):
        raise LeakageError("test document in training fold")
    vocab = getattr(model, "vocab", None)
    if vocab is not None:
        if vocab.total_docs != len(train_docs):
            raise LeakageError("vocabulary fitted on documents outside the training fold")
        train_tokens = {t for d in train_docs for t in d.tokens}
        if not train_tokens.issuperset(vocab.index_to_token):
            raise LeakageError("vocabulary holds tokens unseen in the training fold")


def run_cv(
    dataset: Dataset,
    spec: ModelSpec | str,
    k: int = 5,
    repeats: int = 10,
    seed: int = 0,
    log: Callable[[str], None] | None = None,
) -> EvaluationReport:
    """Repeated stratified k-fold CV; vectorizers and model are refit on every training fold."""
    if k < 2 or repeats < 1:
        raise ValueError("need k >= 2 and repeats >= 1")
    if isinstance(spec, str):
        spec = make_spec(spec) if spec != "majority" else ModelSpec("majority", None)
    config = {
        "model": spec.as_dict() if spec.hyper is not None else {"model_type": spec.model_type},
        "k": k,
        "repeats": repeats,
        "seed": seed,
        "stratified": True,
        "dataset_hash": dataset.fingerprint(),
        "n_documents": len(dataset),
        "class_counts": list(dataset.class_counts),
    }
    report = EvaluationReport(config)
    for r in range(repeats):
        folds = assign_folds(dataset, k, r, seed)
        model_seed = derive_seed(seed, r)
        for f in range(k):
            train = dataset.subset(folds.train_ids(f))
            test_ids = folds.test_ids(f)
            test = dataset.subset(test_ids)
            t0 = time.perf_counter()
            try:
                model = _fit(spec, train, model_seed)
            except (ValueError, RuntimeError) as exc:
                raise FoldError(r, f, exc) from exc
            t1 = time.perf_counter()
            _check_no_leakage(model, train, set(test_ids))
            preds = _predict(model, test)
            t2 = time.perf_counter()
            matrix = confusion([int(d.label) for d in test], preds)
            report.folds.append(FoldResult(r, f, matrix, len(train), len(test), t1 - t0, t2 - t1))
            if log:
                log(f"repeat {r} fold {f}: accuracy {metrics(matrix).accuracy:.4f} (train {t1 - t0:.2f}s)")
    return report


def _fit(spec: ModelSpec, train, seed: int):
    if spec.model_type == "majority":
        counts = np.bincount([int(d.label) for d in train], minlength=N_CLASSES)
        return MajorityModel(int(np.argmax(counts)))
    if hasattr(spec.hyper, "seed"):
        spec = ModelSpec(spec.model_type, replace(spec.hyper, seed=seed), spec.vocab)
    return fit(spec, train)


def _predict(model, docs) -> np.ndarray:
    if isinstance(model, MajorityModel):
        return np.full(len(docs), model.label)
    return predict_docs(model, docs)[0]


@dataclass
class ThroughputRow:
    model: str
    batch_size: int
    docs_per_second: float
    p50_ms: float
    p95_ms: float


@dataclass
class ThroughputReport:
    rows: list[ThroughputRow] = field(default_factory=list)
    hardware: str = ""
    n_docs: int = 0

    def to_dict(self) -> dict:
        return {"hardware": self.hardware, "n_docs": self.n_docs, "rows": [vars(r) for r in self.rows]}

    def render(self) -> str:
        out = [f"{'Model':<28}{'Batch':>6}{'Docs/s':>12}{'p50 ms/doc':>12}{'p95 ms/doc':>12}"]
        for r in self.rows:
            out.append(f"{r.model:<28}{r.batch_size:>6}{r.docs_per_second:>12.1f}{r.p50_ms:>12.4f}{r.p95_ms:>12.4f}")
        out.append(f"({self.n_docs} documents; {self.hardware})")
        return "\n".join(out) + "\n"


def hardware_note() -> str:
    return f"{platform.machine()} {platform.processor() or platform.system()}, python {platform.python_version()}"


def bench(models: Sequence[tuple[str, TrainedModel]], docs: Sequence, batch_sizes: Sequence[int]) -> ThroughputReport:
    """Time prediction over the full sample per (model, batch size), after one warm-up batch."""
    if len(docs) == 0:
        raise ValueError("bench needs at least one document")
    report = ThroughputReport(hardware=hardware_note(), n_docs=len(docs))
    for name, model in models:
        for bs in batch_sizes:
            predict_docs(model, docs[:bs])
            per_doc = []
            start = time.perf_counter()
            for s in range(0, len(docs), bs):
                chunk = docs[s : s + bs]
                t0 = time.perf_counter()
                predict_docs(model, chunk)
                per_doc.append((time.perf_counter() - t0) / len(chunk))
            elapsed = time.perf_counter() - start
            ms = np.array(per_doc) * 1e3
            report.rows.append(
                ThroughputRow(name, bs, len(docs) / elapsed, float(np.percentile(ms, 50)), float(np.percentile(ms, 95)))
            )
    return report

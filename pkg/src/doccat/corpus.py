"""Ticket ingestion, text cleaning, and stratified fold assignment."""

from __future__ import annotations

import csv
import enum
import hashlib
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Mapping


class DataError(Exception):
    """Raised for unusable input data (bad CSV, missing columns, empty classes)."""


class Label(enum.IntEnum):
    CHANGE = 0
    PROBLEM = 1
    REQUEST = 2

    @property
    def title(self) -> str:
        return self.name.capitalize()

    @classmethod
    def parse(cls, text: str) -> "Label | None":
        key = (text or "").strip().upper()
        return cls.__members__.get(key)


LABELS = tuple(Label)
N_CLASSES = len(LABELS)

DEFAULT_COLUMNS = {"subject": "subject", "body": "body", "label": "type", "language": "language"}

_NON_ALNUM = re.compile(r"[^a-z0-9]+")


def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    """Read a one-token-per-line stopword file; the shipped English list by default."""
    if path is None:
        text = resources.files("doccat.data").joinpath("stopwords_en.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


STOPWORDS = load_stopwords()


def clean_text(raw: str, stopwords: frozenset[str] = STOPWORDS) -> str:
    # str.lower() maps some non-ASCII letters onto ASCII ones (e.g. KELVIN SIGN -> k),
    # so the alphabet filter must run after lowering.
    spaced = _NON_ALNUM.sub(" ", (raw or "").lower())
    return " ".join(tok for tok in spaced.split() if tok not in stopwords)


@dataclass(frozen=True)
class RawTicket:
    subject: str
    body: str
    label_text: str
    source_row: int
    language_tag: str | None = None


@dataclass(frozen=True)
class CleanDocument:
    text: str
    label: Label
    doc_id: int

    @property
    def tokens(self) -> list[str]:
        return self.text.split(" ")


DROP_REASONS = ("empty-after-clean", "unknown-label", "missing-field", "non-english")


@dataclass(frozen=True)
class Dataset:
    documents: tuple[CleanDocument, ...]
    class_counts: tuple[int, int, int]
    dropped_count: int = 0
    drop_reasons: Mapping[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.documents)

    @property
    def labels(self) -> list[Label]:
        return [d.label for d in self.documents]

    def subset(self, doc_ids: Iterable[int]) -> list[CleanDocument]:
        by_id = {d.doc_id: d for d in self.documents}
        return [by_id[i] for i in doc_ids]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for d in self.documents:
            h.update(f"{d.doc_id}\t{int(d.label)}\t{d.text}\n".encode())
        return h.hexdigest()

    @classmethod
    def from_documents(cls, docs: Iterable[tuple[str, Label]]) -> "Dataset":
        """Build a dataset from already-cleaned (text, label) pairs, e.g. in tests."""
        documents = tuple(
            CleanDocument(text=text, label=Label(label), doc_id=i) for i, (text, label) in enumerate(docs)
        )
        counts = Counter(d.label for d in documents)
        return cls(documents, tuple(counts.get(l, 0) for l in LABELS))


def load_csv(path: str | Path, column_map: Mapping[str, str] | None = None) -> Iterator[RawTicket]:
    """Yield one RawTicket per CSV data row, in file order."""
    cols = dict(DEFAULT_COLUMNS)
    cols.update(column_map or {})
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, strict=True)
        try:
            header = next(reader)
        except StopIteration:
            return
        except csv.Error as exc:
            raise DataError(f"{path}: malformed CSV header: {exc}") from None
        index = {name: i for i, name in enumerate(header)}
        for key in ("subject", "body", "label"):
            if cols[key] not in index:
                raise DataError(f"{path}: header lacks column {cols[key]!r}")
        lang_idx = index.get(cols.get("language") or "")

        def cell(row: list[str], i: int | None) -> str:
            return row[i] if i is not None and i < len(row) else ""

        row_no = 0
        while True:
            try:
                row = next(reader)
            except StopIteration:
                break
            except csv.Error as exc:
                raise DataError(f"{path}: malformed CSV at data row {row_no + 1}: {exc}") from None
            row_no += 1
            yield RawTicket(
                subject=cell(row, index[cols["subject"]]),
                body=cell(row, index[cols["body"]]),
                label_text=cell(row, index[cols["label"]]),
                source_row=row_no,
                language_tag=cell(row, lang_idx) if lang_idx is not None else None,
            )


def build_dataset(
    tickets: Iterable[RawTicket], stopwords: frozenset[str] = STOPWORDS, require_all_classes: bool = True
) -> Dataset:
    docs: list[CleanDocument] = []
    drops: Counter[str] = Counter()
    for t in tickets:
        if not t.label_text.strip() or not (t.subject.strip() or t.body.strip()):
            drops["missing-field"] += 1
            continue
        label = Label.parse(t.label_text)
        if label is None:
            drops["unknown-label"] += 1
            continue
        if t.language_tag is not None and t.language_tag.strip() and t.language_tag.strip().lower() != "en":
            drops["non-english"] += 1
            continue
        text = clean_text(f"{t.subject} {t.body}", stopwords)
        if not text:
            drops["empty-after-clean"] += 1
            continue
        docs.append(CleanDocument(text=text, label=label, doc_id=len(docs)))
    counts = Counter(d.label for d in docs)
    class_counts = tuple(counts.get(l, 0) for l in LABELS)
    if require_all_classes and docs and min(class_counts) == 0:
        missing = [l.title for l, c in zip(LABELS, class_counts) if c == 0]
        raise DataError(f"dataset unusable: no documents for {', '.join(missing)}")
    return Dataset(tuple(docs), class_counts, sum(drops.values()), dict(sorted(drops.items())))


def load_dataset(path: str | Path, column_map: Mapping[str, str] | None = None, **kw) -> Dataset:
    return build_dataset(load_csv(path, column_map), **kw)


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    repeat_index: int
    fold_of_doc: Mapping[int, int]

    def test_ids(self, fold: int) -> list[int]:
        return [d for d, f in self.fold_of_doc.items() if f == fold]

    def train_ids(self, fold: int) -> list[int]:
        return [d for d, f in self.fold_of_doc.items() if f != fold]


def _class_rng(seed: int, repeat_index: int, class_index: int) -> random.Random:
    digest = hashlib.sha256(f"folds:{seed}:{repeat_index}:{class_index}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def assign_folds(dataset: Dataset, k: int, repeat_index: int = 0, seed: int = 0) -> FoldAssignment:
    """Stratified fold assignment: shuffle each class, deal round-robin into k folds.

    The deal continues across classes (the next class starts at the fold after
    the one the previous class ended on), which keeps total fold sizes within one
    document of each other while each class stays within one document per fold.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    by_class: dict[Label, list[int]] = {l: [] for l in LABELS}
    for d in dataset.documents:
        by_class[d.label].append(d.doc_id)
    for label, ids in by_class.items():
        if 0 < len(ids) < k:
            raise DataError(f"class {label.title} has {len(ids)} documents, fewer than k={k}")
    fold_of_doc: dict[int, int] = {}
    offset = 0
    for label in LABELS:
        ids = list(by_class[label])
        _class_rng(seed, repeat_index, int(label)).shuffle(ids)
        for j, doc_id in enumerate(ids):
            fold_of_doc[doc_id] = (offset + j) % k
        offset = (offset + len(ids)) % k
    return FoldAssignment(k, repeat_index, dict(sorted(fold_of_doc.items())))


def stratified_split(
    labels: list[Label], fraction: float, seed: int
) -> tuple[list[int], list[int]]:
    """Split positions into (train, holdout) with `fraction` of each class held out."""
    train: list[int] = []
    hold: list[int] = []
    for label in LABELS:
        pos = [i for i, l in enumerate(labels) if l == label]
        _class_rng(seed, -1, int(label)).shuffle(pos)
        n_hold = int(round(len(pos) * fraction))
        if pos and fraction > 0:
            n_hold = min(max(n_hold, 1), len(pos) - 1)
        hold.extend(pos[:n_hold])
        train.extend(pos[n_hold:])
    return sorted(train), sorted(hold)

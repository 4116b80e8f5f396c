import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from doccat.corpus import Dataset, Label
from doccat.evaluate import (
    EvaluationReport,
    FoldError,
    LeakageError,
    _check_no_leakage,
    bench,
    confusion,
    derive_seed,
    metrics,
    run_cv,
)
from doccat.models import fit, make_spec
from doccat.synth import SynthConfig, generate
from doccat.corpus import build_dataset

C, P, R = Label.CHANGE, Label.PROBLEM, Label.REQUEST


def test_confusion_examples():
    golds = [0, 1, 2] * 3
    np.testing.assert_array_equal(confusion(golds, golds), np.diag([3, 3, 3]))
    m = confusion(golds, [1] * 9)
    assert m[:, 1].sum() == 9 and m.sum() == 9
    m = confusion([C, C, P], [C, P, P])
    assert m[C, C] == 1 and m[C, P] == 1 and m[P, P] == 1 and m.sum() == 3


def test_confusion_errors():
    with pytest.raises(ValueError, match="mismatch"):
        confusion([0, 1], [0])
    with pytest.raises(ValueError):
        confusion([], [])


def test_minority_row_from_reference_table():
    m = np.array([[55, 45, 0], [0, 700, 12], [0, 30, 330]])
    out = metrics(m)
    assert round(out.precision[C], 2) == 1.0
    assert round(out.recall[C], 2) == 0.55
    assert abs(round(out.f1[C], 2) - 0.71) <= 0.005


def test_perfect_and_degenerate():
    out = metrics(np.diag([4, 5, 6]))
    assert out.precision == out.recall == out.f1 == (1.0, 1.0, 1.0)
    assert out.accuracy == out.macro_f1 == 1.0 and out.degenerate == ((), (), ())
    out = metrics(np.array([[3, 1, 0], [2, 4, 0], [0, 0, 0]]))
    assert (out.precision[R], out.recall[R], out.f1[R]) == (0.0, 0.0, 0.0)
    assert out.degenerate[R] == ("precision", "recall", "f1")
    assert out.degenerate[C] == ()


def test_metrics_empty_matrix_rejected():
    with pytest.raises(ValueError):
        metrics(np.zeros((3, 3), dtype=int))


def test_metrics_match_oracle_on_random_matrices():
    rng = np.random.default_rng(2024)
    for i in range(1000):
        hi = [1, 3, 10, 1000][i % 4]
        m = rng.integers(0, hi + 1, size=(3, 3)) * (rng.random((3, 3)) < 0.8)
        if m.sum() == 0:
            m[0, 0] = 1
        got = metrics(m)
        want = oracles.metrics(m.tolist())
        assert list(got.precision) == want["precision"]
        assert list(got.recall) == want["recall"]
        assert list(got.f1) == want["f1"]
        assert got.accuracy == want["accuracy"] and got.macro_f1 == want["macro_f1"]


@given(st.lists(st.integers(0, 50), min_size=9, max_size=9).filter(lambda v: sum(v) > 0))
def test_metrics_bounds(cells):
    m = np.array(cells).reshape(3, 3)
    out = metrics(m)
    for v in out.precision + out.recall + out.f1 + (out.accuracy, out.macro_f1):
        assert 0.0 <= v <= 1.0
    for c in range(3):
        p, r, f = out.precision[c], out.recall[c], out.f1[c]
        assert min(p, r) - 1e-12 <= f <= max(p, r) + 1e-12


def toy(n_per_class, classes=(C, P, R)):
    return Dataset.from_documents([(f"word{c} shared extra{i % 2}", c) for c in classes for i in range(n_per_class)])


def test_minimal_protocol_walk_by_hand():
    ds = toy(2, (C, P))
    rep = run_cv(ds, "majority", k=2, repeats=1, seed=0)
    assert len(rep.folds) == 2
    for f in rep.folds:
        # one Change + one Problem in training: the tie goes to Change, so each test fold scores 1 of 2
        assert f.n_train == 2 and f.n_test == 2
        np.testing.assert_array_equal(f.matrix, [[1, 0, 0], [1, 0, 0], [0, 0, 0]])
    agg = rep.aggregate()
    assert agg["accuracy_mean"] == 0.5 and agg["accuracy_std"] == 0.0 and agg["pooled_accuracy"] == 0.5


def test_majority_baseline_at_reference_counts():
    counts = (1280, 7120, 3479)
    ds = Dataset.from_documents([("x", l) for l, n in zip(Label, counts) for _ in range(n)])
    rep = run_cv(ds, "majority", k=5, repeats=1)
    agg = rep.aggregate()
    assert agg["pooled_accuracy"] == 7120 / 11879
    assert agg["accuracy_mean"] == pytest.approx(0.5994, abs=5e-4)
    assert np.array(agg["pooled_matrix"])[:, 1].sum() == 11879


def test_run_cv_partitions_and_aggregates(synth_dataset):
    rep = run_cv(synth_dataset, "nb", k=5, repeats=3, seed=1)
    assert len(rep.folds) == 15
    for r in range(3):
        folds = [f for f in rep.folds if f.repeat == r]
        assert sum(f.n_test for f in folds) == len(synth_dataset)
        assert all(f.n_train + f.n_test == len(synth_dataset) for f in folds)
    agg = rep.aggregate()
    pooled = sum(f.matrix for f in rep.folds)
    assert agg["pooled_accuracy"] == np.trace(pooled) / pooled.sum()
    assert pooled.sum() == 3 * len(synth_dataset)
    accs = [np.trace(f.matrix) / f.matrix.sum() for f in rep.folds]
    assert agg["accuracy_mean"] == pytest.approx(np.mean(accs), abs=1e-15)
    assert agg["accuracy_std"] == pytest.approx(np.std(accs, ddof=1), abs=1e-15)
    for c, label in enumerate(Label):
        per = [metrics(f.matrix).recall[c] for f in rep.folds]
        assert agg["per_class"][label.title]["recall"] == pytest.approx(np.mean(per), abs=1e-15)
    best = rep.best_fold()
    assert metrics(best.matrix).accuracy == max(accs)


def test_report_is_deterministic_and_excludes_timings(synth_dataset):
    a = run_cv(synth_dataset, make_spec("logreg", {"epochs": "3"}), k=3, repeats=2, seed=5)
    b = run_cv(synth_dataset, make_spec("logreg", {"epochs": "3"}), k=3, repeats=2, seed=5)
    assert a.to_json() == b.to_json()
    d = json.loads(a.to_json())
    assert "train_seconds" not in json.dumps(d)
    cfg = d["config"]
    assert cfg["dataset_hash"] == synth_dataset.fingerprint()
    assert cfg["stratified"] is True and cfg["k"] == 3 and cfg["repeats"] == 2
    assert cfg["model"]["hyper"]["epochs"] == 3
    t = json.loads(a.timings_json())
    assert len(t["folds"]) == 6 and all(f["train_seconds"] >= 0 for f in t["folds"])
    assert "train_seconds" in json.dumps(a.to_dict(include_timings=True))
    c = run_cv(synth_dataset, make_spec("logreg", {"epochs": "3"}), k=3, repeats=2, seed=6)
    assert c.to_json() != a.to_json()


def test_render_has_tables(synth_dataset):
    text = run_cv(synth_dataset, "nb", k=2, repeats=1).render()
    assert "Precision" in text and "Best fold" in text
    assert all(l in text for l in ("Change", "Problem", "Request"))


def test_seeds_derived_per_repeat():
    assert derive_seed(0, 0) != derive_seed(0, 1) and derive_seed(3, 2) == derive_seed(3, 2)


def test_fold_errors_carry_position(synth_dataset):
    with pytest.raises(FoldError, match="repeat 0, fold 0") as info:
        run_cv(synth_dataset, make_spec("logreg", {"learning_rate": "1e305", "epochs": "2"}), k=2, repeats=1)
    assert info.value.repeat == 0 and info.value.fold == 0


def test_argument_checks(synth_dataset):
    with pytest.raises(ValueError):
        run_cv(synth_dataset, "nb", k=1)
    with pytest.raises(ValueError):
        run_cv(synth_dataset, "nb", repeats=0)


def test_leakage_guard_detects_foreign_tokens():
    ds = toy(4)
    model = fit(make_spec("nb", {"min_df": "1"}), ds.documents)
    _check_no_leakage(model, list(ds.documents), set())
    with pytest.raises(LeakageError):
        _check_no_leakage(model, list(ds.documents[:3]), set())


def test_bench_report_shape(synth_dataset):
    model = fit(make_spec("nb"), synth_dataset.documents)
    docs = list(synth_dataset.documents[:200])
    rep = bench([("nb", model)], docs, [1, 64])
    assert [(r.model, r.batch_size) for r in rep.rows] == [("nb", 1), ("nb", 64)]
    for r in rep.rows:
        assert r.docs_per_second > 0 and r.p50_ms <= r.p95_ms
    assert rep.hardware and rep.n_docs == 200
    assert "Docs/s" in rep.render()
    empty = bench([("nb", model)], docs, [])
    assert empty.rows == [] and json.loads(json.dumps(empty.to_dict()))["rows"] == []
    with pytest.raises(ValueError):
        bench([("nb", model)], [], [1])


def test_nb_throughput_on_short_docs():
    ds = build_dataset(generate(SynthConfig(n_docs=10_000, seed=3)))
    model = fit(make_spec("nb"), ds.documents[:2000])
    rep = bench([("nb", model)], list(ds.documents), [64])
    assert rep.rows[0].docs_per_second > 10_000

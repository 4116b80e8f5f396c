import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

import oracles
from doccat.corpus import Label
from doccat.models.logreg import (
    LRHyperparams,
    LRModel,
    TrainingError,
    class_weights_from_counts,
    fit_matrix,
    log_softmax,
    loss_and_grad,
    lr_predict,
    lr_train,
    softmax,
)
from doccat.vectorize import TfidfVector, Vocabulary


def vocab(V):
    return Vocabulary(tuple(f"t{i}" for i in range(V)), np.ones(V, dtype=np.int64), 1)


def toy_separable():
    # Change gets e1, Problem e2; Request shares a third axis so every class is present.
    X = np.zeros((150, 3))
    X[:50, 0] = 1
    X[50:100, 1] = 1
    X[100:, 2] = 1
    return sp.csr_matrix(X), np.repeat([0, 1, 2], 50)


def test_class_weight_examples():
    assert class_weights_from_counts((100, 100, 100)) == pytest.approx((1, 1, 1))
    assert class_weights_from_counts((1280, 7120, 3479)) == pytest.approx((3.0935, 0.5561, 1.1382), abs=1e-4)
    assert class_weights_from_counts((1, 1, 2)) == pytest.approx((4 / 3, 4 / 3, 2 / 3), abs=1e-15)
    with pytest.raises(ValueError):
        class_weights_from_counts((0, 1, 1))


def test_separable_toy_reaches_full_accuracy():
    X, y = toy_separable()
    model, history = fit_matrix(X, y, vocab(3), LRHyperparams(learning_rate=0.5, epochs=100, l2=0.0))
    assert (np.argmax(model.logits(X), axis=1) == y).all()
    assert len(history) == 100 and history[-1] < history[0]


def test_zero_epochs_gives_uniform_ties():
    X, y = toy_separable()
    model, history = fit_matrix(X, y, vocab(3), LRHyperparams(epochs=0))
    assert history == [] and not model.weights.any() and not model.bias.any()
    label, probs = lr_predict(model, TfidfVector(np.array([1]), np.array([1.0]), 3))
    assert label == Label.CHANGE
    np.testing.assert_allclose(probs, 1 / 3, atol=1e-15)


def test_softmax_examples():
    zero = LRModel(np.zeros((3, 2)), np.zeros(3), vocab(2), LRHyperparams())
    _, p = lr_predict(zero, TfidfVector(np.array([0, 1]), np.array([0.6, 0.8]), 2))
    np.testing.assert_allclose(p, 1 / 3, atol=1e-15)
    biased = LRModel(np.zeros((3, 2)), np.array([10.0, 0, 0]), vocab(2), LRHyperparams())
    label, p = lr_predict(biased, TfidfVector(np.array([0]), np.array([1.0]), 2))
    assert label == Label.CHANGE and p[0] > 0.9999
    assert p[0] == pytest.approx(math.exp(10) / (math.exp(10) + 2), abs=1e-12)
    big = softmax(np.array([1000.0, 0, 0]))
    assert np.isfinite(big).all() and big[0] == 1.0 and big[1] < 1e-300


@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3), st.floats(-1e3, 1e3))
def test_softmax_sums_to_one_and_is_shift_invariant(logits, c):
    z = np.array(logits)
    p = softmax(z)
    assert abs(p.sum() - 1) <= 1e-9
    np.testing.assert_allclose(softmax(z + c), p, atol=1e-9)
    assert np.argmax(softmax(z + c)) == np.argmax(p)


def test_weight_scaling_keeps_trajectory():
    rng = np.random.default_rng(3)
    X = sp.csr_matrix(rng.random((40, 6)))
    y = np.arange(40) % 3
    for l2 in (0.0, 1e-3):
        runs = []
        for w in ((1.0, 1.0, 1.0), (2.0, 2.0, 2.0)):
            hp = LRHyperparams(learning_rate=0.3, epochs=1, batch_size=8, l2=l2, class_weights=w, seed=5)
            traj = []
            W = None
            for epochs in range(1, 6):
                m, hist = fit_matrix(X, y, vocab(6), LRHyperparams(**{**hp.as_dict(), "epochs": epochs, "class_weights": w}))
                traj.append((m.weights, np.argmax(m.logits(X), axis=1)))
            runs.append((traj, hist))
        (a, ha), (b, hb) = runs
        for (wa, pa), (wb, pb) in zip(a, b):
            np.testing.assert_allclose(wa, wb, rtol=1e-12, atol=1e-15)
            np.testing.assert_array_equal(pa, pb)
        np.testing.assert_allclose(np.array(hb), 2 * np.array(ha), rtol=1e-12)


def test_uniform_unpenalized_loss_is_mean_cross_entropy():
    rng = np.random.default_rng(1)
    X = rng.random((12, 4))
    y = rng.integers(0, 3, 12)
    W = rng.normal(size=(3, 4))
    b = rng.normal(size=3)
    obj, *_ = loss_and_grad(W, b, X, y, (1, 1, 1), 0.0)
    ce = []
    for xi, yi in zip(X, y):
        logits = [float(W[c] @ xi + b[c]) for c in range(3)]
        ce.append(-(logits[yi] - math.log(sum(math.exp(l) for l in logits))))
    assert obj == pytest.approx(sum(ce) / len(ce), abs=1e-12)


def test_gradient_check_random_instances():
    rng = np.random.default_rng(42)
    worst = 0.0
    for trial in range(25):
        V = int(rng.integers(1, 11))
        n = int(rng.integers(1, 21))
        X = rng.random((n, V)) * (rng.random((n, V)) < 0.6)
        Xs = sp.csr_matrix(X) if trial % 2 else X
        y = rng.integers(0, 3, n)
        w = tuple(rng.uniform(0.2, 3.0, 3))
        l2 = float(rng.choice([0.0, 1e-3, 0.1]))
        W = rng.normal(size=(3, V))
        b = rng.normal(size=3)
        _, dW, db, _ = loss_and_grad(W, b, Xs, y, w, l2)
        num = oracles.numeric_grad(lambda: loss_and_grad(W, b, Xs, y, w, l2)[0], {"W": W, "b": b})
        worst = max(worst, oracles.rel_error(dW, num["W"]), oracles.rel_error(db, num["b"]))
    assert worst < 1e-5


def test_determinism_bit_identical():
    rng = np.random.default_rng(0)
    X = sp.csr_matrix(rng.random((50, 8)))
    y = np.arange(50) % 3
    hp = LRHyperparams(epochs=5, batch_size=7, seed=11)
    a, ha = fit_matrix(X, y, vocab(8), hp)
    b, hb = fit_matrix(X, y, vocab(8), hp)
    assert a.weights.tobytes() == b.weights.tobytes() and ha == hb
    c, _ = fit_matrix(X, y, vocab(8), LRHyperparams(epochs=5, batch_size=7, seed=12))
    assert a.weights.tobytes() != c.weights.tobytes()


def test_divergence_names_epoch():
    X = sp.csr_matrix(np.array([[1e200, 0], [0, 1e200], [1e200, 1e200]]))
    with pytest.raises(TrainingError, match=r"non-finite loss at epoch \d+"):
        fit_matrix(X, np.array([0, 1, 2]), vocab(2), LRHyperparams(learning_rate=1e10, epochs=3))


@pytest.mark.parametrize(
    "kw, match",
    [({"learning_rate": 0}, "learning_rate"), ({"batch_size": 0}, "batch_size"), ({"class_weights": (1, 0, 1)}, "weights")],
)
def test_invalid_hyperparams(kw, match):
    X, y = toy_separable()
    with pytest.raises(ValueError, match=match):
        fit_matrix(X, y, vocab(3), LRHyperparams(**kw))


def test_missing_class_rejected():
    with pytest.raises(ValueError, match="Request"):
        fit_matrix(sp.csr_matrix(np.eye(2)), np.array([0, 1]), vocab(2), LRHyperparams())


def test_vector_api_matches_matrix_api():
    X, y = toy_separable()
    vecs = [TfidfVector(np.array(r.indices, dtype=np.int64), r.data.copy(), 3) for r in X]
    model, _ = lr_train(list(zip(vecs, [Label(int(l)) for l in y])), LRHyperparams(epochs=3), vocab(3))
    ref, _ = fit_matrix(X, y, vocab(3), LRHyperparams(epochs=3))
    np.testing.assert_array_equal(model.weights, ref.weights)
    for v, row in zip(vecs[::17], X[::17]):
        _, p = lr_predict(model, v)
        np.testing.assert_allclose(p, softmax(model.logits(row))[0], atol=1e-15)
        assert abs(p.sum() - 1) <= 1e-9


def test_log_softmax_consistent():
    z = np.array([[3.0, -1.0, 0.5], [1e3, 0, -1e3]])
    np.testing.assert_allclose(np.exp(log_softmax(z)), softmax(z), atol=1e-15)

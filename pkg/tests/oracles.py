"""Independent reference implementations used by the unit and acceptance tests.

Each oracle is written directly from the textbook formula with plain Python
loops, sharing no code with the package.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction


def nb_scores(train: list[tuple[dict[int, int], int]], V: int, alpha: float, probe: dict[int, int]) -> list[float]:
    """Smoothed multinomial Bayes log score per class, from raw counts."""
    n = len(train)
    out = []
    for c in range(3):
        docs = [counts for counts, label in train if label == c]
        prior = len(docs) / n
        totals = [sum(d.get(t, 0) for d in docs) for t in range(V)]
        total = sum(totals)
        s = math.log(prior)
        for t, k in probe.items():
            s += k * math.log((totals[t] + alpha) / (total + alpha * V))
        out.append(s)
    return out


def multisets(V: int, max_len: int):
    """Every non-empty token multiset of size <= max_len over V tokens, as count dicts."""
    seen = []
    for size in range(1, max_len + 1):
        for combo in itertools.combinations_with_replacement(range(V), size):
            d = {}
            for t in combo:
                d[t] = d.get(t, 0) + 1
            seen.append(d)
    return seen


def count_vectors(V: int, max_count: int):
    for counts in itertools.product(range(max_count + 1), repeat=V):
        yield {t: k for t, k in enumerate(counts) if k}


def metrics(m) -> dict:
    """Per-class precision/recall/F1 plus accuracy and macro-F1 from a 3x3 matrix (rows gold, cols predicted).

    Exact rational arithmetic; 0/0 is reported as 0.
    """

    def div(a, b):
        return Fraction(a, b) if b else Fraction(0)

    p, r, f = [], [], []
    for c in range(3):
        tp = m[c][c]
        fp = sum(m[g][c] for g in range(3)) - tp
        fn = sum(m[c]) - tp
        pc, rc = div(tp, tp + fp), div(tp, tp + fn)
        p.append(pc)
        r.append(rc)
        f.append(2 * pc * rc / (pc + rc) if pc + rc else Fraction(0))
    total = sum(map(sum, m))
    return {
        "precision": [float(x) for x in p],
        "recall": [float(x) for x in r],
        "f1": [float(x) for x in f],
        "accuracy": float(div(sum(m[c][c] for c in range(3)), total)),
        "macro_f1": float(sum(f) / 3),
    }


def numeric_grad(fn, arrays: dict, eps: float = 1e-5) -> dict:
    """Central finite differences of scalar fn() w.r.t. every entry of every array (mutated in place)."""
    import numpy as np

    out = {}
    for name, a in arrays.items():
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            orig = a[idx]
            a[idx] = orig + eps
            up = fn()
            a[idx] = orig - eps
            down = fn()
            a[idx] = orig
            g[idx] = (up - down) / (2 * eps)
        out[name] = g
    return out


def rel_error(analytic, numeric) -> float:
    """Norm-wise relative error ||a - n|| / (||a|| + ||n||), 0 when both vanish."""
    import numpy as np

    den = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    return float(np.linalg.norm(analytic - numeric) / den) if den > 0 else 0.0

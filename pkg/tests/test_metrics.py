import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import average_precision_score, roc_auc_score

from ctssg.errors import DimensionError, ValidationError
from ctssg.metrics import accuracy, auroc, average_precision, evaluate, macro_f1, per_label_f1


# brute-force references

def bf_f1(p, t, thr):
    vals = []
    for m in range(t.shape[1]):
        tp = fp = fn = 0
        for b in range(t.shape[0]):
            pred = p[b, m] >= thr
            tp += pred and t[b, m] == 1
            fp += pred and t[b, m] == 0
            fn += (not pred) and t[b, m] == 1
        if tp + fp + fn:
            vals.append(2 * tp / (2 * tp + fp + fn))
    return sum(vals) / len(vals) if vals else math.nan


def bf_auroc(s, t):
    pos = [x for x, y in zip(s, t) if y == 1]
    neg = [x for x, y in zip(s, t) if y == 0]
    if not pos or not neg:
        return math.nan
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return wins / (len(pos) * len(neg))


def bf_ap(s, t):
    n = len(s)
    precisions = []
    for i in range(n):
        if t[i] != 1:
            continue
        above = [j for j in range(n) if s[j] > s[i] or (s[j] == s[i] and j <= i)]
        precisions.append(sum(t[j] for j in above) / len(above))
    return sum(precisions) / len(precisions) if precisions else math.nan


def bf_accuracy(p, t, thr):
    per = [sum((p[b, m] >= thr) == (t[b, m] == 1) for b in range(t.shape[0])) / t.shape[0] for m in range(t.shape[1])]
    return sum(per) / len(per)


def same(a, b, tol=1e-12):
    return (math.isnan(a) and math.isnan(b)) or abs(a - b) <= tol


# worked examples

def test_f1_cases():
    t = np.array([[1, 0], [0, 1], [1, 1], [0, 0]])
    assert macro_f1(t.astype(float), t) == 1.0
    assert macro_f1(np.zeros((3, 2)), np.ones((3, 2))) == 0.0
    p = np.array([[0.9, 0.2], [0.6, 0.7], [0.1, 0.8], [0.3, 0.4]])
    # label 0: TP=1 (row0), FP=1 (row1), FN=1 (row2) -> 0.5; label 1: TP=2, FP=0, FN=0 -> 1.0
    assert macro_f1(p, t) == 0.75
    assert macro_f1(p, t) == bf_f1(p, t, 0.5)


def test_f1_skips_empty_label():
    f1 = per_label_f1(np.array([[0.9, 0.1], [0.1, 0.2]]), np.array([[1, 0], [0, 0]]))
    assert f1[0] == 1.0 and math.isnan(f1[1])
    assert math.isnan(macro_f1(np.zeros((2, 1)), np.zeros((2, 1))))


def test_auroc_cases():
    t = np.array([0, 0, 1, 1])
    assert auroc(t.astype(float), t) == 1.0
    assert auroc(np.full(4, 0.3), t) == 0.5
    assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert math.isnan(auroc([0.1, 0.2], [1, 1]))


def test_ap_cases():
    assert average_precision([0.9, 0.8, 0.1, 0.05], [1, 1, 0, 0]) == 1.0
    assert average_precision([0.2, 0.9], [1, 0]) == 0.5
    assert math.isnan(average_precision([0.2, 0.9], [0, 0]))
    rng = np.random.default_rng(0)
    s, t = rng.uniform(size=20), rng.integers(0, 2, size=20)
    t[0] = 1
    assert abs(average_precision(s, t) - bf_ap(s, t)) < 1e-12
    # no ties: agrees with the step-wise definition used by sklearn too
    assert abs(average_precision(s, t) - average_precision_score(t, s)) < 1e-12


def test_accuracy_cases():
    t = np.array([[1, 0], [0, 1], [1, 1]])
    assert accuracy(t.astype(float), t) == 1.0
    assert accuracy(1.0 - t, t) == 0.0
    p = np.array([[0.7, 0.7], [0.2, 0.2], [0.9, 0.1]])
    assert accuracy(p, t) == bf_accuracy(p, t, 0.5) == 0.5


def test_validation():
    with pytest.raises(DimensionError):
        macro_f1(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValidationError):
        macro_f1(np.full((2, 2), 1.5), np.zeros((2, 2)))
    with pytest.raises(ValidationError):
        auroc([0.1, 0.2], [0, 2])


def test_random_instances_match_brute_force():
    rng = np.random.default_rng(1)
    for trial in range(200):
        B, M = rng.integers(1, 12), rng.integers(1, 5)
        # coarse grid so ties occur
        p = rng.integers(0, 6, size=(B, M)) / 5.0 if trial % 2 else rng.uniform(size=(B, M))
        t = rng.integers(0, 2, size=(B, M))
        thr = rng.choice([0.3, 0.5, 0.6])
        assert same(macro_f1(p, t, thr), bf_f1(p, t, thr))
        assert same(accuracy(p, t, thr), bf_accuracy(p, t, thr))
        for m in range(M):
            assert same(auroc(p[:, m], t[:, m]), bf_auroc(p[:, m], t[:, m]))
            assert same(average_precision(p[:, m], t[:, m]), bf_ap(p[:, m], t[:, m]))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(-50, 50), st.booleans()), min_size=2, max_size=30))
def test_auroc_monotone_invariance(pairs):
    # integer grid keeps exp() strictly monotone in floating point
    s = np.array([a / 10 for a, _ in pairs])
    t = np.array([int(b) for _, b in pairs])
    base = auroc(s, t)
    if math.isnan(base):
        return
    assert auroc(np.exp(s), t) == base
    assert auroc(3.0 * s + 7.0, t) == base
    assert abs(base - roc_auc_score(t, s)) < 1e-12


def test_evaluate_report():
    rng = np.random.default_rng(2)
    p, t = rng.uniform(size=(10, 3)), rng.integers(0, 2, size=(10, 3))
    t[:, 2] = 0
    rep = evaluate(p, t)
    assert rep.skipped["auroc"] == 1 and rep.skipped["ap"] == 1
    d = rep.to_dict()
    assert d["per_label"]["auroc"][2] is None
    for key in ("macro_f1", "auroc", "map", "accuracy"):
        assert 0.0 <= d[key] <= 1.0
    assert rep.auroc == pytest.approx(np.mean([bf_auroc(p[:, m], t[:, m]) for m in range(2)]), abs=1e-12)

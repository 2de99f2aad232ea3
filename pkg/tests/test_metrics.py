from fractions import Fraction

import numpy as np
import pytest
from sklearn.metrics import f1_score, precision_score, recall_score

from btabl.metrics import (ConfusionMatrix, calibration, confusion, fpr_at_tpr, micro_macro_roc,
                           multiclass_metrics, pairwise_auroc, roc_curve, single_class_metrics)


def test_confusion_cases():
    assert np.array_equal(confusion([0, 1, 2], [0, 1, 2]).counts, np.eye(3, dtype=int))
    cm = confusion([0], [2]).counts
    assert cm[0, 2] == 1 and cm.sum() == 1
    rng = np.random.default_rng(0)
    t, p = rng.integers(3, size=100), rng.integers(3, size=100)
    ref = np.zeros((3, 3), dtype=int)
    for a, b in zip(t, p):
        ref[a, b] += 1
    assert np.array_equal(confusion(t, p).counts, ref)


def test_diagonal_is_perfect():
    rep = multiclass_metrics(ConfusionMatrix(np.diag([3, 4, 5])))
    assert rep.accuracy == rep.macro_f1 == rep.weighted_precision == 1.0


def test_hand_computed_matrix():
    rep = multiclass_metrics(ConfusionMatrix(np.array([[2, 0, 0], [1, 1, 0], [0, 0, 1]])))
    assert rep.accuracy == pytest.approx(4 / 5, abs=1e-15)
    precision = [Fraction(2, 3), Fraction(1), Fraction(1)]
    recall = [Fraction(1), Fraction(1, 2), Fraction(1)]
    f1 = [2 * p * r / (p + r) for p, r in zip(precision, recall)]
    support = [2, 2, 1]
    np.testing.assert_allclose(rep.precision, [float(x) for x in precision], rtol=1e-15)
    np.testing.assert_allclose(rep.recall, [float(x) for x in recall], rtol=1e-15)
    assert rep.macro_f1 == pytest.approx(float(sum(f1) / 3), rel=1e-15)
    assert rep.weighted_f1 == pytest.approx(float(sum(f * s for f, s in zip(f1, support)) / 5), rel=1e-15)
    assert rep.macro_precision == pytest.approx(float(sum(precision) / 3), rel=1e-15)


def test_single_predicted_class():
    rep = multiclass_metrics(confusion([0, 1, 2, 2, 1], [1] * 5))
    assert rep.recall.tolist() == [0.0, 1.0, 0.0]
    assert rep.macro_recall == pytest.approx(1 / 3)
    assert "precision" in rep.per_class[0].undefined


def test_binary_reduction_cases():
    m = single_class_metrics(ConfusionMatrix(np.diag([5, 5])), 0)
    assert m.fdr == 0 and m.precision == m.recall == m.tnr == m.accuracy == 1
    m = single_class_metrics(confusion([0, 0, 1, 1], [0, 0, 0, 0], 2), 0)
    assert (m.precision, m.recall, m.fdr) == (0.5, 1.0, 0.5)


def test_binary_reduction_against_loops():
    rng = np.random.default_rng(1)
    t, p = rng.integers(3, size=200), rng.integers(3, size=200)
    cm = confusion(t, p)
    for c in range(3):
        tp = sum(1 for a, b in zip(t, p) if a == c and b == c)
        fn = sum(1 for a, b in zip(t, p) if a == c and b != c)
        fp = sum(1 for a, b in zip(t, p) if a != c and b == c)
        tn = 200 - tp - fn - fp
        m = single_class_metrics(cm, c)
        assert cm.binary(c) == (tp, fn, fp, tn)
        assert m.fpr == pytest.approx(fp / (fp + tn)) and m.fnr == pytest.approx(fn / (tp + fn))
        assert m.fdr == pytest.approx(fp / (fp + tp)) and m.tnr == pytest.approx(tn / (tn + fp))


def test_against_sklearn():
    rng = np.random.default_rng(2)
    for _ in range(20):
        t, p = rng.integers(3, size=150), rng.integers(3, size=150)
        rep = multiclass_metrics(confusion(t, p))
        for avg, ours in (("macro", rep.macro_f1), ("weighted", rep.weighted_f1)):
            assert ours == pytest.approx(f1_score(t, p, average=avg), rel=1e-12)
        assert rep.weighted_precision == pytest.approx(precision_score(t, p, average="weighted"), rel=1e-12)
        assert rep.macro_recall == pytest.approx(recall_score(t, p, average="macro"), rel=1e-12)
        assert rep.accuracy == pytest.approx(f1_score(t, p, average="micro"), rel=1e-12)


def test_roc_trivial_cases():
    truths = np.array([1] * 5 + [0] * 5, dtype=bool)
    assert roc_curve(np.where(truths, 0.9, 0.1), truths).auroc == 1.0
    assert roc_curve(np.full(10, 0.5), truths).auroc == pytest.approx(0.5, abs=1e-15)
    assert not roc_curve(np.full(4, 0.5), np.ones(4)).defined


def test_roc_against_pairwise_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        truths = rng.random(200) < 0.4
        scores = np.clip(rng.normal(0.5 + 0.15 * truths, 0.2), 0, 1)
        assert abs(roc_curve(scores, truths).auroc - pairwise_auroc(scores, truths)) < 0.02


def test_micro_macro_cases():
    rng = np.random.default_rng(4)
    y = rng.integers(2, size=400)
    perfect = (y == 0).astype(float)
    random = rng.random(400)
    scores = np.stack([perfect, random], axis=1)
    _, macro, per, excluded = micro_macro_roc(scores, y)
    oracle = (pairwise_auroc(perfect, y == 0) + pairwise_auroc(random, y == 1)) / 2
    assert excluded == ()
    assert macro.auroc == pytest.approx(0.75, abs=0.05)
    assert macro.auroc == pytest.approx(oracle, abs=0.02)
    np.testing.assert_allclose(macro.fpr, (per[0].fpr + per[1].fpr) / 2)

    _, _, _, excluded = micro_macro_roc(rng.dirichlet([1, 1, 1], size=30), np.zeros(30, int))
    assert excluded == (0, 1, 2)


def test_identical_classes_micro_equals_macro():
    rng = np.random.default_rng(5)
    n = 300
    y = rng.integers(2, size=n)
    s = np.clip(rng.normal(0.5 + 0.2 * (y == 1), 0.2), 0, 1)
    y2 = np.concatenate([y, 1 - y])
    sc = np.concatenate([np.stack([1 - s, s], 1), np.stack([s, 1 - s], 1)])
    micro, macro, per, _ = micro_macro_roc(sc, y2)
    np.testing.assert_allclose(per[0].fpr, per[1].fpr)
    assert micro.auroc == pytest.approx(macro.auroc, abs=1e-12)


def test_calibration_cases():
    c = calibration(np.full(10, 0.5), np.array([1, 0] * 5))
    assert abs(c.ece) < 1e-12 and abs(c.ecd) < 1e-12
    c = calibration(np.full(10, 0.9), np.zeros(10))
    assert c.ece == -0.9 and np.count_nonzero(c.count) == 1 and c.frequency[18] == 0.0
    assert calibration(np.full(10, 0.9), np.zeros(10), signed=False).ece == 0.9


def test_calibration_against_loop():
    rng = np.random.default_rng(6)
    s = rng.random(500)
    t = rng.random(500) < s ** 1.5
    bins = [[] for _ in range(20)]
    for x, y in zip(s, t):
        bins[min(int(x * 20), 19)].append((x, y))
    ece = ecd2 = 0.0
    for b in bins:
        if b:
            gap = np.mean([y for _, y in b]) - np.mean([x for x, _ in b])
            ece += len(b) / 500 * gap
            ecd2 += len(b) / 500 * gap ** 2
    c = calibration(s, t)
    assert c.ece == pytest.approx(ece, abs=1e-12)
    assert c.ecd == pytest.approx(np.sqrt(ecd2), abs=1e-12)


def _curve(fpr, tpr):
    from btabl.metrics import RocCurve
    return RocCurve(np.arange(len(fpr), dtype=float), np.array(fpr, float), np.array(tpr, float), 0.0)


def test_fpr_at_tpr():
    assert fpr_at_tpr(_curve([0.0], [1.0])) == (0.0, True)
    grid = np.linspace(0, 1, 21)
    assert fpr_at_tpr(_curve(grid, grid))[0] == pytest.approx(0.95, abs=1e-12)
    assert fpr_at_tpr(_curve([0.5], [1.0]))[0] == pytest.approx(0.475, abs=1e-15)

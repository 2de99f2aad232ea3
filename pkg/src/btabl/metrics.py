"""Classification metrics: confusion matrices, averaged scores, ROC and calibration.

Labels are internal class indices ``0..C-1``. Rates with a zero
denominator are reported as 0 and listed in the report's ``undefined``
field instead of propagating NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lobdata import ContractError

ROC_THRESHOLDS = np.round(np.arange(1, 21) * 0.05, 10)


def _div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den != 0)
    return out


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # rows true, cols predicted

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def binary(self, c: int):
        """``(TP, FN, FP, TN)`` with class ``c`` as the positive designation."""
        cm = self.counts
        tp = int(cm[c, c])
        fn = int(cm[c].sum() - tp)
        fp = int(cm[:, c].sum() - tp)
        return tp, fn, fp, self.total - tp - fn - fp


def confusion(y_true, y_pred, n_classes: int = 3) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ContractError(f"label arrays must be 1-D and equal length, got {y_true.shape} and {y_pred.shape}")
    for y in (y_true, y_pred):
        if y.size and (y.min() < 0 or y.max() >= n_classes):
            raise ContractError(f"labels must lie in [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    return ConfusionMatrix(counts)


@dataclass
class SingleClassMetrics:
    precision: float
    recall: float
    f1: float
    accuracy: float
    tpr: float
    fnr: float
    tnr: float
    fpr: float
    fdr: float
    undefined: tuple = ()


def single_class_metrics(cm: ConfusionMatrix, c: int) -> SingleClassMetrics:
    if not 0 <= c < cm.n_classes:
        raise IndexError(f"class {c} outside [0, {cm.n_classes})")
    tp, fn, fp, tn = cm.binary(c)
    undefined = []
    if tp + fp == 0:
        undefined += ["precision", "fdr"]
    if tp + fn == 0:
        undefined += ["recall", "tpr", "fnr"]
    if tn + fp == 0:
        undefined += ["tnr", "fpr"]
    precision = float(_div(tp, tp + fp))
    recall = float(_div(tp, tp + fn))
    return SingleClassMetrics(
        precision=precision,
        recall=recall,
        f1=float(_div(2 * precision * recall, precision + recall)),
        accuracy=float(_div(tp + tn, cm.total)),
        tpr=recall,
        fnr=float(_div(fn, tp + fn)),
        tnr=float(_div(tn, tn + fp)),
        fpr=float(_div(fp, tn + fp)),
        fdr=float(_div(fp, fp + tp)),
        undefined=tuple(undefined),
    )


@dataclass
class MetricsReport:
    accuracy: float  # equals micro precision, recall and f1
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    class_accuracy: np.ndarray
    support: np.ndarray
    macro_precision: float
    macro_recall: float
    macro_f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    per_class: list = field(default_factory=list)  # SingleClassMetrics per class
    undefined: tuple = ()

    @property
    def micro(self) -> float:
        return self.accuracy

    def row(self) -> dict:
        return {"micro": self.accuracy,
                "macro_precision": self.macro_precision, "weighted_precision": self.weighted_precision,
                "macro_recall": self.macro_recall, "weighted_recall": self.weighted_recall,
                "macro_f1": self.macro_f1, "weighted_f1": self.weighted_f1}


def multiclass_metrics(cm: ConfusionMatrix) -> MetricsReport:
    if cm.total == 0:
        raise ContractError("metrics need at least one scored sample")
    counts = cm.counts
    tp = np.diag(counts).astype(np.float64)
    support = counts.sum(axis=1)
    predicted = counts.sum(axis=0)
    precision = _div(tp, predicted)
    recall = _div(tp, support)
    f1 = _div(2 * precision * recall, precision + recall)
    per_class = [single_class_metrics(cm, c) for c in range(cm.n_classes)]
    undefined = tuple(f"class {c}: {name}" for c, m in enumerate(per_class) for name in m.undefined)
    w = support / support.sum()
    # pooled TP over pooled (TP + FP) is the trace over the total for single-label data
    accuracy = float(tp.sum() / cm.total)
    return MetricsReport(
        accuracy=accuracy,
        precision=precision, recall=recall, f1=f1,
        class_accuracy=np.array([m.accuracy for m in per_class]),
        support=support,
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        weighted_precision=float(w @ precision),
        # support-weighted recall reduces to sum(TP) / n; use that form to avoid rounding drift
        weighted_recall=float(tp[support > 0].sum() / cm.total),
        weighted_f1=float(w @ f1),
        per_class=per_class,
        undefined=undefined,
    )


def micro_scores(cm: ConfusionMatrix):
    """Micro precision, recall and f1 from pooled one-vs-rest counts."""
    tp = fp = fn = 0
    for c in range(cm.n_classes):
        t, n, p, _ = cm.binary(c)
        tp, fn, fp = tp + t, fn + n, fp + p
    # the count form of f1 keeps it bit-identical to accuracy when fp == fn
    return tp / (tp + fp), tp / (tp + fn), 2 * tp / (2 * tp + fp + fn)


@dataclass
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auroc: float
    defined: bool = True

    @property
    def points(self):
        return list(zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist()))

    def path(self):
        """Curve points sorted by FPR with the (0,0) and (1,1) endpoints added."""
        f = np.concatenate([[0.0], self.fpr, [1.0]])
        t = np.concatenate([[0.0], self.tpr, [1.0]])
        order = np.lexsort((t, f))
        return f[order], t[order]


def _auroc_from_points(fpr, tpr) -> float:
    f = np.concatenate([[0.0], fpr, [1.0]])
    t = np.concatenate([[0.0], tpr, [1.0]])
    order = np.lexsort((t, f))
    f, t = f[order], t[order]
    return float(np.sum(np.diff(f) * (t[1:] + t[:-1]) / 2))


def _rates(scores, truths, thresholds):
    scores = np.asarray(scores, dtype=np.float64)
    truths = np.asarray(truths).astype(bool)
    keep = scores[None, :] >= thresholds[:, None]
    tp = (keep & truths).sum(axis=1)
    fp = (keep & ~truths).sum(axis=1)
    return tp, fp, truths.sum(), (~truths).sum()


def roc_curve(scores, truths, thresholds=ROC_THRESHOLDS) -> RocCurve:
    """Threshold-grid ROC for one positive designation.

    At each threshold the samples scoring at least that value are kept and
    the kept positives/negatives are divided by the full positive/negative
    totals. AUROC is the trapezoidal area of the FPR-sorted points with the
    (0,0) and (1,1) endpoints appended.
    """
    thresholds = np.asarray(thresholds, dtype=np.float64)
    tp, fp, n_pos, n_neg = _rates(scores, truths, thresholds)
    if n_pos == 0 or n_neg == 0:
        nan = np.full(len(thresholds), np.nan)
        return RocCurve(thresholds, nan, nan.copy(), float("nan"), defined=False)
    tpr, fpr = tp / n_pos, fp / n_neg
    return RocCurve(thresholds, fpr, tpr, _auroc_from_points(fpr, tpr))


def micro_macro_roc(scores, y_true, thresholds=ROC_THRESHOLDS):
    """Micro (pooled one-vs-rest decisions) and macro (averaged rates) ROC curves.

    ``scores`` is ``(n, C)``; column ``c`` scores the designation "class c".
    Classes without positives or negatives are left out of the macro
    average and listed in the returned ``excluded`` tuple. The macro curve
    averages per-class FPR/TPR at each threshold, while ``macro.auroc`` is
    the mean of the per-class AUROCs.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n, C = scores.shape
    if C < 2:
        raise ContractError("micro/macro ROC needs at least two classes")
    y_true = np.asarray(y_true, dtype=np.int64)
    onehot = np.eye(C, dtype=bool)[y_true]
    thresholds = np.asarray(thresholds, dtype=np.float64)
    micro = roc_curve(scores.ravel(), onehot.ravel(), thresholds)
    per_class = [roc_curve(scores[:, c], onehot[:, c], thresholds) for c in range(C)]
    good = [r for r in per_class if r.defined]
    excluded = tuple(c for c, r in enumerate(per_class) if not r.defined)
    if good:
        fpr = np.mean([r.fpr for r in good], axis=0)
        tpr = np.mean([r.tpr for r in good], axis=0)
        # the curve averages rates; its AUROC averages the per-class areas
        macro = RocCurve(thresholds, fpr, tpr, float(np.mean([r.auroc for r in good])))
    else:
        nan = np.full(len(thresholds), np.nan)
        macro = RocCurve(thresholds, nan, nan.copy(), float("nan"), defined=False)
    return micro, macro, per_class, excluded


def pairwise_auroc(scores, truths) -> float:
    """Probability a positive outscores a negative, ties counted half."""
    scores = np.asarray(scores, dtype=np.float64)
    truths = np.asarray(truths).astype(bool)
    pos, neg = scores[truths], scores[~truths]
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


def fpr_at_tpr(curve: RocCurve, target_tpr: float = 0.95):
    """FPR where the curve first reaches ``target_tpr``, linearly interpolated.

    Returns ``(fpr, reached)``; ``(1.0, False)`` when the target is never hit.
    """
    if not curve.defined:
        return 1.0, False
    f, t = curve.path()
    hits = np.nonzero(t >= target_tpr)[0]
    if len(hits) == 0:
        return 1.0, False
    i = hits[0]
    if i == 0 or t[i] == t[i - 1]:
        return float(f[i]), True
    frac = (target_tpr - t[i - 1]) / (t[i] - t[i - 1])
    return float(f[i - 1] + frac * (f[i] - f[i - 1])), True


@dataclass
class CalibrationCurve:
    lower: np.ndarray
    upper: np.ndarray
    mean_score: np.ndarray  # NaN for empty bins
    frequency: np.ndarray   # NaN for empty bins
    count: np.ndarray
    ece: float
    ecd: float


def calibration(scores, truths, bins: int = 20, signed: bool = True) -> CalibrationCurve:
    """Equal-width reliability curve on [0, 1].

    ``ece`` is the count-weighted mean of ``frequency - mean_score`` (its
    absolute value per bin when ``signed=False``); ``ecd`` is the
    count-weighted L2 distance of the curve from the diagonal.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truths = np.asarray(truths).astype(np.float64)
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.clip(np.floor(scores * bins).astype(np.int64), 0, bins - 1)
    count = np.bincount(idx, minlength=bins)
    # exactly rounded per-bin sums keep constant-score bins exact
    order = np.argsort(idx, kind="stable")
    parts = np.split(order, np.cumsum(count)[:-1])
    sum_s = np.array([math.fsum(scores[p]) for p in parts])
    sum_y = np.array([math.fsum(truths[p]) for p in parts])
    occupied = count > 0
    mean_score = np.full(bins, np.nan)
    freq = np.full(bins, np.nan)
    mean_score[occupied] = sum_s[occupied] / count[occupied]
    freq[occupied] = sum_y[occupied] / count[occupied]
    n = len(scores)
    gap = freq[occupied] - mean_score[occupied]
    w = count[occupied] / n
    ece = math.fsum(w * (gap if signed else np.abs(gap)))
    ecd = math.sqrt(math.fsum(w * gap ** 2))
    return CalibrationCurve(edges[:-1], edges[1:], mean_score, freq, count, ece, ecd)

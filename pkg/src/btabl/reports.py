"""Plot-ready CSV tables built from predictive probabilities.

Every builder returns ``(header, rows)``; :func:`write_csv` renders floats
with ``repr`` so identical inputs give byte-identical files. Missing values
(empty partitions, undefined rates) are written as empty cells.
"""

from __future__ import annotations

import csv
import math

import numpy as np

from .bayes import CELLS, PredictiveSet, PredictiveSummary, esf, histogram01, predictive_confusion_stats, rank_statistics, score_densities
from .metrics import calibration, confusion, fpr_at_tpr, micro_macro_roc, multiclass_metrics

METRIC_COLUMNS = ("micro", "macro_precision", "weighted_precision", "macro_recall", "weighted_recall",
                  "macro_f1", "weighted_f1")
SINGLE_COLUMNS = ("precision", "recall", "f1", "accuracy", "tpr", "fnr", "tnr", "fpr", "fdr")
ESF_GRID = np.round(np.arange(101) / 100, 2)


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def _metrics(y, labels, C):
    return multiclass_metrics(confusion(y, labels, C))


def to_summaries(summary: dict, y) -> list:
    out = []
    for i in range(len(summary["predicted"])):
        out.append(PredictiveSummary(
            summary["mean_probs"][i], summary["median_probs"][i], int(summary["predicted"][i]),
            tuple(summary["ranked"][i].tolist()), float(summary["rank_gap"][i]), summary["label_counts"][i],
            int(summary["modal"][i]), int(summary["mean_label"][i]), int(summary["median_label"][i]),
            None if y is None else int(y[i]), i))
    return out


def multiclass_table(probs, summary, y, stochastic: bool):
    C = probs.shape[2]
    rows = []
    if stochastic:
        per_draw = np.array([[getattr(_metrics(y, summary["draw_labels"][:, k], C), c) if c != "micro"
                              else _metrics(y, summary["draw_labels"][:, k], C).accuracy
                              for c in METRIC_COLUMNS] for k in range(probs.shape[1])])
        for name, fn in (("mean", np.mean), ("median", np.median), ("min", np.min), ("max", np.max)):
            rows.append(["sample_by_sample", name, *fn(per_draw, axis=0)])
        for name, key in (("mean", "mean_label"), ("median", "median_label"), ("mode", "modal")):
            rows.append(["forecast_function", name, *_metrics(y, summary[key], C).row().values()])
        rows.append(["predictive", "mean", *_metrics(y, summary["predicted"], C).row().values()])
        rows.append(["predictive", "median", *_metrics(y, summary["median_probs"].argmax(axis=1), C).row().values()])
    else:
        rows.append(["point", "argmax", *_metrics(y, summary["predicted"], C).row().values()])
    return ["group", "row", *METRIC_COLUMNS], rows


def singleclass_table(probs, summary, y, stochastic: bool):
    C = probs.shape[2]
    rows = []
    rep = _metrics(y, summary["predicted"], C)
    for c, m in enumerate(rep.per_class):
        rows.append(["predictive", c, *(getattr(m, k) for k in SINGLE_COLUMNS)])
    if stochastic:
        draws = [_metrics(y, summary["draw_labels"][:, k], C) for k in range(probs.shape[1])]
        for c in range(C):
            vals = np.mean([[getattr(d.per_class[c], k) for k in SINGLE_COLUMNS] for d in draws], axis=0)
            rows.append(["sample_mean", c, *vals])
    return ["row", "class", *SINGLE_COLUMNS], rows


def roc_and_calibration(mean_probs, y):
    """ROC rows, calibration rows and the AUROC/ECE/ECD summary rows."""
    n, C = mean_probs.shape
    onehot = np.eye(C, dtype=bool)[y]
    micro, macro, per_class, _ = micro_macro_roc(mean_probs, y)
    curves = [(f"class_{c}", r) for c, r in enumerate(per_class)] + [("micro", micro), ("macro", macro)]
    roc_rows = [[name, t, f, tp] for name, r in curves for t, f, tp in r.points]

    cals = [(f"class_{c}", calibration(mean_probs[:, c], onehot[:, c])) for c in range(C)]
    cals.append(("micro", calibration(mean_probs.ravel(), onehot.ravel())))
    cal_rows = []
    for name, cc in cals:
        for b in range(len(cc.count)):
            cal_rows.append([name, b, cc.lower[b], cc.upper[b], cc.mean_score[b], cc.frequency[b], cc.count[b]])

    per_cal = [c for _, c in cals[:C]]
    summary = [
        ["auroc", *[r.auroc for r in per_class], micro.auroc, macro.auroc],
        ["ece", *[c.ece for c in per_cal], cals[C][1].ece, float(np.mean([c.ece for c in per_cal]))],
        ["ecd", *[c.ecd for c in per_cal], cals[C][1].ecd, float(np.mean([c.ecd for c in per_cal]))],
        ["fpr_at_95tpr", *[fpr_at_tpr(r)[0] for r in per_class], fpr_at_tpr(micro)[0], fpr_at_tpr(macro)[0]],
    ]
    class_cols = [f"class_{c}" for c in range(C)]
    return ((["curve", "threshold", "fpr", "tpr"], roc_rows),
            (["curve", "bin", "lower", "upper", "mean_score", "frequency", "count"], cal_rows),
            (["measure", *class_cols, "micro", "macro"], summary))


def rank_table(summaries):
    stats = rank_statistics(summaries)
    rows = []
    for part in ("correct", "misclassified"):
        for name in ("mean", "median", "min", "max"):
            vals = stats[part][name] if stats[part] is not None else [None] * 4
            rows.append([part, name, *vals])
    return ["partition", "statistic", "p1", "p2", "p3", "gap"], rows


def esf_table(p1, correct=None):
    if correct is None:
        return ["threshold", "esf_all"], [[t, v] for t, v in zip(ESF_GRID, esf(p1, ESF_GRID))]
    e1, e0 = esf(p1[correct], ESF_GRID), esf(p1[~correct], ESF_GRID)
    return (["threshold", "esf_correct", "esf_misclassified", "difference"],
            [[t, a, b, a - b] for t, a, b in zip(ESF_GRID, e1, e0)])


def density_table(probs, y, bins: int = 50):
    header = ["true_class", "outcome", "prob_class", "bin", "lower", "upper", "count", "class_mean"]
    edges = np.linspace(0, 1, bins + 1)
    rows = []
    if y is None:
        flat = probs.reshape(-1, probs.shape[2])
        groups = {(None, "all"): (np.stack([histogram01(flat[:, c], bins) for c in range(flat.shape[1])]),
                                  flat.mean(axis=0))}
    else:
        groups = score_densities([PredictiveSet(p, i, int(t)) for i, (p, t) in enumerate(zip(probs, y))], bins)
    for (tc, outcome), (counts, means) in groups.items():
        for c in range(counts.shape[0]):
            for b in range(bins):
                rows.append([tc, outcome, c, b, edges[b], edges[b + 1], counts[c, b], means[c]])
    return header, rows


def confusion_stats_table(summaries, C):
    rows = []
    for c in range(C):
        stats = predictive_confusion_stats(summaries, c)
        for cell in CELLS:
            v = stats[cell]
            rows.append([c, cell, *(v if v is not None else (None, None, None, 0))])
    return ["class", "cell", "mean_p1", "mean_p_class", "mean_p_true", "count"], rows


def label_frequency_table(summary, y, C):
    rows = []
    n = len(summary["predicted"])
    for source, key in (("predictive", "predicted"), ("modal", "modal")):
        pred = summary[key]
        for c in range(C):
            pf = float(np.mean(pred == c))
            if y is None:
                rows.append([source, c, None, pf, None, None])
            else:
                tp = float(np.sum((pred == c) & (y == c)) / n)
                rows.append([source, c, float(np.mean(y == c)), pf, tp, pf - tp])
    return ["source", "class", "true_frequency", "predicted_frequency", "tp_fraction", "fp_fraction"], rows


def per_stock_table(summary, y, stocks, C):
    rows = []
    for s in sorted(set(stocks.tolist())):
        m = stocks == s
        rep = _metrics(y[m], summary["predicted"][m], C)
        rows.append([s, int(m.sum()), *rep.row().values()])
    return ["stock", "support", *METRIC_COLUMNS], rows

"""Predictive distributions from repeated stochastic forward passes.

A predictor turns a batch of inputs into an ``(n, N_s, C)`` array of class
probabilities, one row per stochastic pass. Posterior draws (VOGN) are
shared by every input within a draw, so draw ``k`` is one sampled network;
MC-dropout masks are derived per ``(input_id, draw)`` with a counter-based
hash. Either way the result does not depend on batch composition or order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import network_forward
from .optim import VariationalState, vogn_sample

DRAW_TAG = 0x5EED


def draw_seed(base_seed: int, draw: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(base_seed) & 0xFFFFFFFFFFFFFFFF, DRAW_TAG, int(draw)])


_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        x = x + np.uint64(0x9E3779B97F4A7C15)
        x = (x ^ (x >> np.uint64(30))) * _M1
        x = (x ^ (x >> np.uint64(27))) * _M2
        return x ^ (x >> np.uint64(31))


def counter_uniform(seed: int, draw: int, input_ids, size: int) -> np.ndarray:
    """Uniforms in [0, 1) of shape ``(len(input_ids), size)`` keyed by (seed, draw, id, position)."""
    ids = np.asarray(input_ids, dtype=np.uint64)
    key = _splitmix64(_splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF)) ^ np.uint64(draw))
    k = _splitmix64(key ^ _splitmix64(ids))[:, None]
    x = _splitmix64(k ^ np.arange(size, dtype=np.uint64)[None, :])
    return (x >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


class PointPredictor:
    """Deterministic network: every draw is the same forward pass."""

    def __init__(self, net, theta):
        self.net, self.theta = net, np.asarray(theta, dtype=np.float64)

    def draw_probs(self, X, n_draws, seed=0, input_ids=None):
        p = np.exp(network_forward(self.theta, self.net, X)[0])
        return np.repeat(p[:, None, :], n_draws, axis=1)


class PosteriorPredictor:
    """Monte-Carlo predictive from a mean-field Gaussian posterior."""

    def __init__(self, net, state: VariationalState):
        self.net, self.state = net, state

    def sample(self, seed, draw):
        return vogn_sample(self.state, np.random.default_rng(draw_seed(seed, draw)))

    def draw_probs(self, X, n_draws, seed=0, input_ids=None):
        out = np.empty((len(X), n_draws, self.net.n_classes))
        for k in range(n_draws):
            out[:, k] = np.exp(network_forward(self.sample(seed, k), self.net, X)[0])
        return out


class DropoutPredictor:
    """MC dropout: inverted dropout on the input entries, one mask per (input, draw)."""

    def __init__(self, net, theta, rate: float):
        if not 0 <= rate < 1:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.net, self.theta, self.rate = net, np.asarray(theta, dtype=np.float64), rate

    def mask(self, seed, draw, input_ids, shape):
        u = counter_uniform(seed, draw, input_ids, int(np.prod(shape)))
        return (u >= self.rate).reshape((len(u),) + tuple(shape)) / (1.0 - self.rate)

    def draw_probs(self, X, n_draws, seed=0, input_ids=None):
        ids = np.arange(len(X)) if input_ids is None else np.asarray(input_ids)
        out = np.empty((len(X), n_draws, self.net.n_classes))
        for k in range(n_draws):
            m = self.mask(seed, k, ids, X.shape[1:])
            out[:, k] = np.exp(network_forward(self.theta, self.net, X, input_mask=m)[0])
        return out


@dataclass
class PredictiveSet:
    probs: np.ndarray  # N_s x C
    input_id: int = 0
    true_label: int | None = None


@dataclass
class PredictiveSummary:
    mean_probs: np.ndarray
    median_probs: np.ndarray
    predicted_class: int
    ranked: tuple
    rank_gap: float
    label_counts: np.ndarray
    modal_label: int
    mean_label_rounded: int
    median_label_rounded: int
    true_label: int | None = None
    input_id: int = 0


def predictive_set(predictor, window, n_samples: int, seed: int = 0, input_id: int = 0) -> PredictiveSet:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    x = window.x if hasattr(window, "x") else np.asarray(window)
    probs = predictor.draw_probs(x[None], n_samples, seed, np.array([input_id]))[0]
    return PredictiveSet(probs, input_id, getattr(window, "label", None))


def predictive_sets(predictor, X, n_samples: int, seed: int = 0, input_ids=None, batch_size: int = 8192):
    """``(n, N_s, C)`` probabilities for a stacked input batch, processed in chunks."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    ids = np.arange(len(X)) if input_ids is None else np.asarray(input_ids)
    chunks = [predictor.draw_probs(X[i:i + batch_size], n_samples, seed, ids[i:i + batch_size])
              for i in range(0, len(X), batch_size)]
    return np.concatenate(chunks, axis=0)


def _round_half_up(x):
    return np.floor(np.asarray(x) + 0.5).astype(np.int64)


def summarize_array(probs: np.ndarray) -> dict:
    """Vectorized summaries for an ``(n, N_s, C)`` probability array.

    Argmax ties resolve to the lowest class index, as do ties between
    equally frequent per-draw labels.
    """
    probs = np.asarray(probs, dtype=np.float64)
    n, ns, C = probs.shape
    mean = probs.mean(axis=1)
    ranked = -np.sort(-mean, axis=1)
    draw_labels = probs.argmax(axis=2)
    counts = np.stack([(draw_labels == c).sum(axis=1) for c in range(C)], axis=1)
    return {
        "mean_probs": mean,
        "median_probs": np.median(probs, axis=1),
        "predicted": mean.argmax(axis=1),
        "ranked": ranked,
        "rank_gap": ranked[:, 0] - ranked[:, 1] if C > 1 else ranked[:, 0],
        "draw_labels": draw_labels,
        "label_counts": counts,
        "modal": counts.argmax(axis=1),
        "mean_label": _round_half_up(draw_labels.mean(axis=1)),
        "median_label": _round_half_up(np.median(draw_labels, axis=1)),
    }


def summarize(ps: PredictiveSet) -> PredictiveSummary:
    s = {k: v[0] for k, v in summarize_array(ps.probs[None]).items()}
    return PredictiveSummary(
        mean_probs=s["mean_probs"],
        median_probs=s["median_probs"],
        predicted_class=int(s["predicted"]),
        ranked=tuple(float(v) for v in s["ranked"]),
        rank_gap=float(s["rank_gap"]),
        label_counts=s["label_counts"],
        modal_label=int(s["modal"]),
        mean_label_rounded=int(s["mean_label"]),
        median_label_rounded=int(s["median_label"]),
        true_label=ps.true_label,
        input_id=ps.input_id,
    )


RANK_COLUMNS = ("p1", "p2", "p3", "gap")
STATISTICS = ("mean", "median", "min", "max")


def _describe(rows: np.ndarray):
    if len(rows) == 0:
        return None
    return {"mean": rows.mean(axis=0), "median": np.median(rows, axis=0),
            "min": rows.min(axis=0), "max": rows.max(axis=0)}


def rank_statistics(summaries) -> dict:
    """Mean/median/min/max of the top-3 ranked probabilities and the rank-1/2 gap.

    Returns ``{"correct": stats, "misclassified": stats}`` where ``stats``
    maps a statistic name to a length-4 array ``(p1, p2, p3, gap)``, or is
    ``None`` for an empty partition.
    """
    rows = {"correct": [], "misclassified": []}
    for s in summaries:
        if s.true_label is None:
            raise ValueError("rank statistics need true labels")
        key = "correct" if s.predicted_class == s.true_label else "misclassified"
        rows[key].append(list(s.ranked[:3]) + [s.rank_gap])
    return {k: _describe(np.array(v, dtype=np.float64).reshape(-1, 4)) for k, v in rows.items()}


def esf(values, grid) -> np.ndarray:
    """Empirical survivor function: share of ``values`` strictly above each grid point."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    grid = np.asarray(grid, dtype=np.float64)
    if len(v) == 0:
        return np.full(grid.shape, np.nan)
    return (len(v) - np.searchsorted(v, grid, side="right")) / len(v)


def histogram01(values, bins: int = 50) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64).ravel()
    idx = np.clip(np.floor(v * bins).astype(np.int64), 0, bins - 1)
    return np.bincount(idx, minlength=bins)


def score_densities(sets, bins: int = 50) -> dict:
    """Histograms of per-draw class probabilities by (true class, outcome).

    ``sets`` are labeled :class:`PredictiveSet` objects; the outcome of each
    is decided by its predicted class. Returns
    ``{(true_class, "correct" | "misclassified"): (counts[C, bins], means[C])}``.
    """
    groups = {}
    for ps in sets:
        if ps.true_label is None:
            raise ValueError("score densities need true labels")
        pred = int(ps.probs.mean(axis=0).argmax())
        key = (int(ps.true_label), "correct" if pred == ps.true_label else "misclassified")
        groups.setdefault(key, []).append(ps.probs)
    out = {}
    for key in sorted(groups):
        p = np.concatenate(groups[key], axis=0)
        out[key] = (np.stack([histogram01(p[:, c], bins) for c in range(p.shape[1])]), p.mean(axis=0))
    return out


CELLS = ("TP", "FN", "FP", "TN")


def predictive_confusion_stats(summaries, c: int) -> dict:
    """Probability statistics per TP/FN/FP/TN cell for the designation "class ``c``".

    Positives are samples whose true label is ``c``. Each non-empty cell maps
    to ``(mean_p1, mean_p_c, mean_p_true, count)``: the mean top-rank
    probability, the mean probability placed on ``c`` and the mean
    probability placed on each sample's own true label. Empty cells are
    ``None``.
    """
    cells = {k: [] for k in CELLS}
    for s in summaries:
        if s.true_label is None:
            raise ValueError("confusion statistics need true labels")
        pos, hit = s.true_label == c, s.predicted_class == c
        key = "TP" if pos and hit else "FN" if pos else "FP" if hit else "TN"
        cells[key].append((s.ranked[0], s.mean_probs[c], s.mean_probs[s.true_label]))
    return {k: (None if not v else (*np.mean(v, axis=0).tolist(), len(v))) for k, v in cells.items()}

"""Synthetic limit-order-book streams with a planted, learnable label rule.

Features are i.i.d. standard normal. The label of event ``t`` is read off a
linear temporal statistic of the last ``T`` events::

    score_t = sum_k w[k] * (v @ x[t - k])

thresholded so that the classes (stationary, up, down) occur with the
requested frequencies. A TABL layer can represent this rule exactly, so
accuracy well above the majority share is evidence that training works.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from statistics import NormalDist

import numpy as np

from .lobdata import N_FEATURES, N_LABELS, LobEvent, build_windows, write_fi2010

# internal class -> raw FI-2010 label
_RAW = {0: 2, 1: 1, 2: 3}


@dataclass(frozen=True)
class PlantedRule:
    temporal: np.ndarray  # length T, index 0 is the newest event
    loading: np.ndarray   # length N_FEATURES, zero outside the first D features
    up: float
    down: float

    @property
    def T(self) -> int:
        return len(self.temporal)


def planted_rule(T: int = 10, D: int = 40, balance=(0.6, 0.2, 0.2), n_active: int = 8,
                 seed: int = 0) -> PlantedRule:
    rng = np.random.default_rng(seed)
    temporal = np.linspace(1.0, 0.2, T)
    loading = np.zeros(N_FEATURES)
    active = rng.choice(D, size=min(n_active, D), replace=False)
    loading[active] = rng.choice([-1.0, 1.0], size=len(active))
    sd = np.linalg.norm(temporal) * np.linalg.norm(loading)
    _, p_up, p_down = balance
    nd = NormalDist()
    return PlantedRule(temporal, loading, sd * nd.inv_cdf(1 - p_up), sd * nd.inv_cdf(p_down))


def planted_stream(n_events: int, rule: PlantedRule, rng: np.random.Generator):
    """Features ``(n_events, 144)`` and internal class labels ``(n_events,)``.

    Events earlier than ``T-1`` only see the lags that exist.
    """
    feats = rng.standard_normal((n_events, N_FEATURES))
    proj = feats @ rule.loading
    score = np.zeros(n_events)
    for k, w in enumerate(rule.temporal):
        score[k:] += w * proj[:n_events - k]
    labels = np.where(score > rule.up, 1, np.where(score < rule.down, 2, 0))
    return feats, labels


def raw_labels(labels) -> np.ndarray:
    raw = np.vectorize(_RAW.get)(np.asarray(labels))
    return np.repeat(raw[:, None], N_LABELS, axis=1).astype(np.float64)


def stream_events(feats, labels, stock_id=1, day=1) -> list[LobEvent]:
    raw = raw_labels(labels).astype(int)
    return [LobEvent(f, tuple(r), stock_id, day, i) for i, (f, r) in enumerate(zip(feats, raw))]


def planted_windows(n_windows: int, rule: PlantedRule, rng: np.random.Generator, D: int = 40,
                    stock_id=1, day=1):
    """Exactly ``n_windows`` labeled windows from one fresh stream."""
    feats, labels = planted_stream(n_windows + rule.T - 1, rule, rng)
    return build_windows(stream_events(feats, labels, stock_id, day), rule.T, 10, range(D))


def planted_benchmark(n_train: int = 6000, n_test: int = 2000, T: int = 10, D: int = 40,
                      balance=(0.6, 0.2, 0.2), seed: int = 0):
    """Independent train and test window sets drawn from the same planted rule."""
    rule = planted_rule(T, D, balance, seed=seed)
    rng = np.random.default_rng([seed, 1])
    train = planted_windows(n_train, rule, rng, D, day=1)
    test = planted_windows(n_test, rule, rng, D, day=2)
    return train, test


def write_planted_directory(path, n_stocks: int = 2, n_days: int = 5, events_per_day: int = 200,
                            seed: int = 0, orientation: str = "rows", T: int = 10) -> Path:
    """Write ``<path>/stock_<k>/day_<dd>.txt`` FI-2010 files from a planted rule."""
    root = Path(path)
    rule = planted_rule(T, seed=seed)
    rng = np.random.default_rng([seed, 2])
    for s in range(1, n_stocks + 1):
        sdir = root / f"stock_{s}"
        sdir.mkdir(parents=True, exist_ok=True)
        for d in range(1, n_days + 1):
            feats, labels = planted_stream(events_per_day, rule, rng)
            write_fi2010(sdir / f"day_{d:02d}.txt", feats, raw_labels(labels), orientation)
    return root

"""FI-2010 style limit-order-book data: parsing, windowing and splits.

Each event carries 144 (already z-scored) features followed by five
categorical labels, one per prediction horizon. Raw labels follow the
FI-2010 convention ``1 = up, 2 = stationary, 3 = down`` and are remapped to
internal class indices through an explicit label mapping.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from itertools import groupby
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

N_FEATURES = 144
N_LABELS = 5
ARITY = N_FEATURES + N_LABELS
HORIZONS = (10, 20, 30, 50, 100)
DEFAULT_DIMS = tuple(range(40))

# raw FI-2010 label -> internal class index (0 stationary, 1 up, 2 down)
DEFAULT_LABEL_MAPPING = {1: 1, 2: 0, 3: 2}
DEFAULT_CLASS_NAMES = ("stationary", "up", "down")

_SEP = re.compile(r"[,\s]+")


class DataError(ValueError):
    """Base class for input-data problems."""


class ParseError(DataError):
    def __init__(self, path, line, column, token):
        super().__init__(f"{path}:{line}:{column}: cannot parse {token!r} as a number")
        self.line, self.column = line, column


class FormatError(DataError):
    pass


class LabelError(DataError):
    pass


class ContractError(ValueError):
    """A caller broke a documented precondition."""


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LobEvent:
    features: np.ndarray
    labels: tuple | None
    stock_id: int = 1
    day: int = 1
    event_index: int = 0


@dataclass(frozen=True)
class LobWindow:
    x: np.ndarray  # D x T, columns oldest -> newest
    label: int | None
    stock_id: int
    day: int
    anchor_event_index: int


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list
    class_names: tuple = DEFAULT_CLASS_NAMES
    label_mapping: dict = field(default_factory=lambda: dict(DEFAULT_LABEL_MAPPING))
    discarded: int = 0


def check_label_mapping(mapping) -> dict:
    m = {int(k): int(v) for k, v in mapping.items()}
    if sorted(m) != [1, 2, 3] or sorted(m.values()) != [0, 1, 2]:
        raise ConfigError(f"label mapping must be a bijection {{1,2,3}} -> {{0,1,2}}, got {mapping}")
    return m


def _split_line(line: str) -> list[str]:
    return [t for t in _SEP.split(line.strip()) if t]


def _read_table(path) -> list[list[float]]:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = _split_line(line)
            if not tokens:
                continue
            row = []
            for col, tok in enumerate(tokens, start=1):
                try:
                    row.append(float(tok))
                except ValueError:
                    raise ParseError(path, lineno, col, tok) from None
            rows.append((lineno, row))
    return rows


def parse_fi2010(path, orientation: str = "rows", *, stock_id: int = 1, day: int = 1,
                 labeled: bool = True) -> list[LobEvent]:
    """Parse one FI-2010 text matrix into events, in file order.

    ``orientation="rows"`` expects one event per line; ``"columns"`` expects
    the distributed layout with one line per feature/label and one column
    per event. Separators may be whitespace or commas. With
    ``labeled=False`` each event has 144 values and no labels.
    """
    if orientation not in ("rows", "columns"):
        raise ConfigError(f"orientation must be 'rows' or 'columns', got {orientation!r}")
    arity = ARITY if labeled else N_FEATURES
    rows = _read_table(path)
    if not rows:
        return []

    if orientation == "rows":
        for lineno, row in rows:
            if len(row) != arity:
                raise FormatError(f"{path}:{lineno}: expected {arity} values per event, got {len(row)}")
        table = np.array([r for _, r in rows], dtype=np.float64)
    else:
        if len(rows) != arity:
            raise FormatError(f"{path}: expected {arity} lines in column orientation, got {len(rows)}")
        width = len(rows[0][1])
        for lineno, row in rows:
            if len(row) != width:
                raise FormatError(f"{path}:{lineno}: ragged line, expected {width} columns, got {len(row)}")
        table = np.array([r for _, r in rows], dtype=np.float64).T

    if not np.all(np.isfinite(table)):
        bad = np.argwhere(~np.isfinite(table))[0]
        raise FormatError(f"{path}: non-finite value at event {bad[0]}, field {bad[1]}")

    events = []
    for i, vec in enumerate(table):
        labels = None
        if labeled:
            raw = vec[N_FEATURES:]
            if not all(v in (1.0, 2.0, 3.0) for v in raw):
                raise LabelError(f"{path}: event {i} has labels {raw.tolist()}, expected values in {{1, 2, 3}}")
            labels = tuple(int(v) for v in raw)
        events.append(LobEvent(vec[:N_FEATURES].copy(), labels, stock_id, day, i))
    return events


def select_features(event: LobEvent, dims: Sequence[int] = DEFAULT_DIMS) -> np.ndarray:
    dims = list(dims)
    for d in dims:
        if not 0 <= d < N_FEATURES:
            raise IndexError(f"feature index {d} outside [0, {N_FEATURES})")
    return event.features[dims]


def build_windows(events: Sequence[LobEvent], T: int = 10, horizon: int = 10,
                  dims: Sequence[int] = DEFAULT_DIMS, label_mapping=None) -> list[LobWindow]:
    """Slide a length-``T`` window over one (stock, day) event stream.

    One window per anchor ``t >= T-1``; its columns are events ``t-T+1 .. t``
    and its label is the anchor's label at ``horizon``.
    """
    if horizon not in HORIZONS:
        raise ConfigError(f"horizon must be one of {HORIZONS}, got {horizon}")
    if T < 1:
        raise ConfigError("window length T must be >= 1")
    mapping = check_label_mapping(label_mapping or DEFAULT_LABEL_MAPPING)
    if not events:
        return []
    keys = {(e.stock_id, e.day) for e in events}
    if len(keys) > 1:
        raise ContractError(f"build_windows needs a single (stock, day) stream, got {sorted(keys)}")
    if len(events) < T:
        return []
    h = HORIZONS.index(horizon)
    feats = np.stack([select_features(e, dims) for e in events], axis=1)  # D x n
    out = []
    for t in range(T - 1, len(events)):
        anchor = events[t]
        label = None if anchor.labels is None else mapping[anchor.labels[h]]
        out.append(LobWindow(feats[:, t - T + 1:t + 1].copy(), label, anchor.stock_id,
                             anchor.day, anchor.event_index))
    return out


def _floor(x: float) -> int:
    # guard against 0.29 * 100 == 28.999999999999996
    return math.floor(x + 1e-9)


def make_splits(windows: Iterable[LobWindow], train_frac: float = 0.75, val_frac: float = 0.15,
                test_days: int = 3, class_names=DEFAULT_CLASS_NAMES,
                label_mapping=None) -> DatasetSplit:
    """Chronological per-stock split.

    The last ``test_days`` days of each stock go to test. Of the remaining
    ``n`` windows the first ``floor(train_frac*n)`` train and the last
    ``floor(val_frac*n)`` validate; anything in between is discarded.
    """
    if train_frac < 0 or val_frac < 0 or train_frac + val_frac > 1 + 1e-12:
        raise ConfigError(f"need train_frac + val_frac <= 1, got {train_frac} + {val_frac}")
    if test_days < 0:
        raise ConfigError("test_days must be >= 0")
    windows = sorted(windows, key=lambda w: (w.stock_id, w.day, w.anchor_event_index))
    train, val, test = [], [], []
    discarded = 0
    for stock, group in groupby(windows, key=lambda w: w.stock_id):
        group = list(group)
        days = sorted({w.day for w in group})
        if len(days) < test_days:
            raise ConfigError(f"stock {stock} has {len(days)} days, fewer than test_days={test_days}")
        test_set = set(days[len(days) - test_days:]) if test_days else set()
        rest = [w for w in group if w.day not in test_set]
        test.extend(w for w in group if w.day in test_set)
        n = len(rest)
        n_train, n_val = _floor(train_frac * n), _floor(val_frac * n)
        train.extend(rest[:n_train])
        val.extend(rest[n - n_val:] if n_val else [])
        discarded += n - n_train - n_val
    if discarded:
        logger.info("discarded %d windows between the training and validation segments", discarded)
    return DatasetSplit(train, val, test, tuple(class_names),
                        check_label_mapping(label_mapping or DEFAULT_LABEL_MAPPING), discarded)


def zscore_fit_apply(train: Sequence[LobWindow], others: Sequence[LobWindow] = ()):
    """Standardize each feature row with statistics from ``train`` only.

    Returns ``(train_normalized, others_normalized, mean, std)``; ``std`` is
    floored at 1e-8 so constant features map to zero.
    """
    if not train:
        raise ContractError("z-scoring needs at least one training window")
    stacked = np.concatenate([w.x for w in train], axis=1)
    mean = stacked.mean(axis=1)
    std = np.maximum(stacked.std(axis=1), 1e-8)

    def apply(ws):
        return [LobWindow((w.x - mean[:, None]) / std[:, None], w.label, w.stock_id, w.day,
                          w.anchor_event_index) for w in ws]

    return apply(train), apply(others), mean, std


def stack_windows(windows: Sequence[LobWindow]):
    """Return ``(X, y)`` arrays of shape ``(n, D, T)`` and ``(n,)``.

    ``y`` is ``None`` if any window is unlabeled.
    """
    if not windows:
        raise ContractError("no windows to stack")
    X = np.stack([w.x for w in windows])
    if any(w.label is None for w in windows):
        return X, None
    return X, np.array([w.label for w in windows], dtype=np.int64)


def load_directory(path, orientation: str = "rows", labeled: bool = True) -> dict:
    """Read a data directory into ``{(stock_id, day): [LobEvent, ...]}``.

    Layout: either text files directly under ``path`` (one stock) or one
    subdirectory per stock. Within a stock each file is one day; stocks and
    days are numbered from 1 in sorted name order.
    """
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"data directory {root} does not exist")
    subdirs = sorted(p for p in root.iterdir() if p.is_dir())
    stock_dirs = subdirs if subdirs else [root]
    streams = {}
    for sid, sdir in enumerate(stock_dirs, start=1):
        files = sorted(p for p in sdir.iterdir() if p.is_file() and not p.name.startswith("."))
        if not files:
            raise DataError(f"no data files in {sdir}")
        for day, f in enumerate(files, start=1):
            streams[(sid, day)] = parse_fi2010(f, orientation, stock_id=sid, day=day, labeled=labeled)
    return streams


def write_fi2010(path, features: np.ndarray, labels: np.ndarray | None, orientation: str = "rows"):
    """Write events as an FI-2010 text matrix (inverse of :func:`parse_fi2010`)."""
    table = features if labels is None else np.hstack([features, labels])
    if orientation == "columns":
        table = table.T
    with open(path, "w") as fh:
        for row in table:
            fh.write(" ".join(repr(float(v)) for v in row))
            fh.write("\n")

"""Command-line driver: ``btabl train | evaluate | predict``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure. Checkpoints are JSON with shortest round-trip float rendering, so a
save/load/save cycle reproduces the same bytes.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import reports
from .config import RunConfig
from .lobdata import (ConfigError, ContractError, DataError, build_windows, load_directory, make_splits,
                      stack_windows)
from .model import BILINEAR_FLATTEN_ORDER, FLATTEN_ORDER, NetworkShape
from .training import (EVAL_TAG, SAMPLE_TAG, SHUFFLE_TAG, NumericalError, TrainResult, fit, init_state,
                       is_stochastic, network_shape, predict_all, state_from_dict, state_to_dict)

logger = logging.getLogger("btabl")

FORMAT_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
SPLITS = ("train", "validation", "test")


class CheckpointError(ConfigError):
    pass


# ---------------------------------------------------------------- data

def load_windows(cfg: RunConfig, data_dir, labeled: bool = True) -> list:
    """All windows of a data directory, one stream per (stock, day)."""
    streams = load_directory(data_dir, cfg.orientation, labeled)
    windows = []
    for key in sorted(streams):
        windows.extend(build_windows(streams[key], cfg.window, cfg.horizon, cfg.feature_dims, cfg.mapping))
    if not windows:
        raise DataError(f"no complete windows of length {cfg.window} in {data_dir}")
    return windows


def split_windows(cfg: RunConfig, windows):
    try:
        return make_splits(windows, cfg.train_frac, cfg.val_frac, cfg.test_days, cfg.class_names, cfg.mapping)
    except ConfigError as exc:
        raise DataError(str(exc)) from exc


def fit_normalization(cfg: RunConfig, train) -> dict | None:
    if not cfg.zscore:
        return None
    x = np.concatenate([w.x for w in train], axis=1)
    return {"mean": x.mean(axis=1).tolist(), "std": np.maximum(x.std(axis=1), 1e-8).tolist()}


def arrays(windows, norm):
    X, y = stack_windows(windows)
    if norm is not None:
        X = (X - np.array(norm["mean"])[None, :, None]) / np.array(norm["std"])[None, :, None]
    return X, y


# ---------------------------------------------------------- checkpoints

def checkpoint_dict(cfg: RunConfig, net: NetworkShape, state, epoch: int, n_train: int,
                    history: TrainResult | None, norm) -> dict:
    best = None if history is None or history.best_f1 == -np.inf else history.best_f1
    return {
        "format_version": FORMAT_VERSION,
        "network": net.to_dict(),
        "flatten_order": {"hidden": list(BILINEAR_FLATTEN_ORDER), "head": list(FLATTEN_ORDER),
                          "layout": "hidden layers first, then head; each matrix row-major"},
        "optimizer": cfg.optimizer,
        "state": state_to_dict(state),
        "N": n_train,
        "step": state.step,
        "epoch": epoch,
        "rng": {"seed": cfg.seed, "scheme": "SeedSequence([seed, tag, counter...])",
                "tags": {"shuffle": SHUFFLE_TAG, "sample": SAMPLE_TAG, "eval": EVAL_TAG},
                "next_shuffle_epoch": epoch + 1},
        "normalization": norm,
        "history": {"log": [] if history is None else history.log,
                    "val_losses": [] if history is None else history.val_losses,
                    "best_f1": best, "best_epoch": 0 if history is None else history.best_epoch},
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
    }


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def save_checkpoint(path, ck: dict):
    Path(path).write_text(dumps(ck))


def load_checkpoint(path):
    """Returns ``(raw_dict, cfg, net, state)``."""
    try:
        ck = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if ck.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {ck.get('format_version')!r}")
    cfg = RunConfig.from_dict(ck["config"], require_data=False)
    if cfg.hash() != ck["config_hash"]:
        raise CheckpointError("checkpoint config hash does not match its config")
    net = NetworkShape.from_dict(ck["network"])
    state = state_from_dict(ck["optimizer"], ck["state"])
    return ck, cfg, net, state


def history_from(ck) -> TrainResult:
    h = ck["history"]
    best = -np.inf if h["best_f1"] is None else h["best_f1"]
    return TrainResult(None, ck["epoch"], list(h["log"]), list(h["val_losses"]), best, h["best_epoch"])


# --------------------------------------------------------------- train

def write_learning_curve(path, log):
    reports.write_csv(path, ["epoch", "split", "loss", "accuracy", "macro_f1"],
                      [[r["epoch"], r["split"], r["loss"], r["accuracy"], r["macro_f1"]] for r in log])


def cmd_train(cfg: RunConfig, out, resume=None) -> TrainResult:
    out = Path(out)
    windows = load_windows(cfg, cfg.data_dir)
    split = split_windows(cfg, windows)
    if not split.train:
        raise DataError("training split is empty")
    if split.train[0].label is None:
        raise DataError("training data must be labeled")
    norm = fit_normalization(cfg, split.train)
    train = arrays(split.train, norm)
    validation = arrays(split.validation, norm) if split.validation else None
    net = network_shape(cfg)
    n = len(train[0])

    if resume is not None:
        ck, ck_cfg, ck_net, state = load_checkpoint(resume)
        if ck_cfg.hash() != cfg.hash():
            raise CheckpointError("config differs from the checkpoint's config; refusing to resume")
        if ck["N"] != n:
            raise DataError(f"training split has {n} windows, checkpoint expects {ck['N']}")
        history, start = history_from(ck), ck["epoch"]
    else:
        state, history, start = init_state(cfg, net, n), None, 0

    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(dumps(cfg.to_dict()))
    if start == 0:
        save_checkpoint(out / "checkpoint_epoch0000.json", checkpoint_dict(cfg, net, state, 0, n, history, norm))
    write_learning_curve(out / "learning_curve.csv", [] if history is None else history.log)

    def on_epoch(res: TrainResult):
        ck = checkpoint_dict(cfg, net, res.state, res.epoch, n, res, norm)
        if res.epoch % cfg.checkpoint_every == 0:
            save_checkpoint(out / f"checkpoint_epoch{res.epoch:04d}.json", ck)
        if res.best_epoch == res.epoch:
            save_checkpoint(out / "checkpoint_best.json", ck)
        save_checkpoint(out / "checkpoint_last.json", ck)
        write_learning_curve(out / "learning_curve.csv", res.log)

    try:
        result = fit(cfg, net, train, validation, state=state, start_epoch=start, history=history,
                     on_epoch=on_epoch)
    except NumericalError as exc:
        (out / "diagnostic.json").write_text(dumps({"error": str(exc), "epoch": exc.epoch, "batch": exc.batch,
                                                    "loss": repr(exc.info.get("loss")),
                                                    "batch_indices": exc.info.get("batch_indices")}))
        raise
    return result


# ------------------------------------------------------------ evaluate

def _draws(cfg, ns):
    if ns is not None:
        return ns
    return cfg.ns_test if is_stochastic(cfg) else 1


def cmd_evaluate(checkpoint, data, out, per_stock=False, split_name="test", ns=None, seed=None,
                 labeled=True, state=None) -> dict:
    """Write the report bundle; returns ``{filename: (header, rows)}``.

    ``state`` overrides the checkpoint's optimizer state (used to probe
    degenerate posteriors).
    """
    ck, cfg, net, ck_state = load_checkpoint(checkpoint)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    state = ck_state if state is None else state
    windows = getattr(split_windows(cfg, load_windows(cfg, data, labeled)), split_name)
    if not windows:
        raise DataError(f"the {split_name} split is empty")
    X, y = arrays(windows, ck["normalization"])
    stocks = np.array([w.stock_id for w in windows])
    stochastic = is_stochastic(cfg)
    probs, summary = predict_all(cfg, net, state, X, _draws(cfg, ns))
    C = net.n_classes

    tables = {
        "label_frequencies.csv": reports.label_frequency_table(summary, y, C),
        "esf.csv": reports.esf_table(summary["ranked"][:, 0],
                                     None if y is None else summary["predicted"] == y),
        "score_density.csv": reports.density_table(probs, y),
    }
    if y is not None:
        sums = reports.to_summaries(summary, y)
        roc, cal, scalar = reports.roc_and_calibration(summary["mean_probs"], y)
        tables.update({
            "metrics_multiclass.csv": reports.multiclass_table(probs, summary, y, stochastic),
            "metrics_singleclass.csv": reports.singleclass_table(probs, summary, y, stochastic),
            "roc.csv": roc,
            "calibration.csv": cal,
            "auroc_ece_ecd.csv": scalar,
            "rank_stats.csv": reports.rank_table(sums),
            "confusion_stats.csv": reports.confusion_stats_table(sums, C),
        })
        if per_stock:
            tables["per_stock_metrics.csv"] = reports.per_stock_table(summary, y, stocks, C)
    else:
        logger.warning("no true labels: writing uncertainty outputs only")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for name in sorted(tables):
        reports.write_csv(out / name, *tables[name])
    return tables


# ------------------------------------------------------------- predict

def prediction_rows(windows, summary, C):
    header = (["input_id", "stock", "day", "anchor_event", *[f"mean_prob_{c}" for c in range(C)], "p1",
               "rank_gap", "predicted", "modal", "median_label", "mean_label",
               *[f"count_{c}" for c in range(C)], "true_label"])
    rows = []
    for i, w in enumerate(windows):
        rows.append([i, w.stock_id, w.day, w.anchor_event_index, *summary["mean_probs"][i],
                     summary["ranked"][i, 0], summary["rank_gap"][i], summary["predicted"][i],
                     summary["modal"][i], summary["median_label"][i], summary["mean_label"][i],
                     *summary["label_counts"][i], w.label])
    return header, rows


def cmd_predict(checkpoint, data, ns, out, seed=None, labeled=False):
    """Predictive summaries for every window in ``data`` (labels optional)."""
    ck, cfg, net, state = load_checkpoint(checkpoint)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if ns < 1:
        raise ConfigError("--ns must be >= 1")
    windows = load_windows(cfg, data, labeled)
    X, _ = arrays(windows, ck["normalization"])
    _, summary = predict_all(cfg, net, state, X, ns)
    header, rows = prediction_rows(windows, summary, net.n_classes)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    reports.write_csv(out, header, rows)
    return header, rows


# ---------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="btabl", description="Bayesian TABL training and evaluation for LOB data.")
    p.add_argument("--seed", type=int, default=None, help="override the run seed")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--resume", help="checkpoint to continue from")

    e = sub.add_parser("evaluate", help="write the CSV report bundle")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--per-stock", action="store_true")
    e.add_argument("--split", choices=SPLITS, default="test")
    e.add_argument("--ns", type=int, default=None, help="predictive draws (default: ns_test or 1)")
    e.add_argument("--unlabeled", action="store_true", help="input files carry no label columns")

    r = sub.add_parser("predict", help="per-input predictive summaries")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--ns", type=int, required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--labeled", action="store_true", help="input files carry label columns")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "train":
            cfg = RunConfig.load(args.config)
            if args.seed is not None:
                cfg = replace(cfg, seed=args.seed).validate()
            cmd_train(cfg, args.out, args.resume)
        elif args.command == "evaluate":
            cmd_evaluate(args.checkpoint, args.data, args.out, args.per_stock, args.split, args.ns, args.seed,
                         labeled=not args.unlabeled)
        else:
            cmd_predict(args.checkpoint, args.data, args.ns, args.out, args.seed, labeled=args.labeled)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ContractError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Acceptance criteria; the terminal summary prints one line per criterion."""

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from btabl.bayes import PosteriorPredictor, predictive_sets, summarize_array
from btabl.cli import main
from btabl.config import RunConfig
from btabl.lobdata import stack_windows
from btabl.metrics import ConfusionMatrix, calibration, micro_scores, multiclass_metrics, pairwise_auroc, roc_curve
from btabl.model import NetworkShape, TablParams, TablShape, network_forward, tabl_backward_per_sample, tabl_forward
from btabl.optim import (VariationalState, adam_init, adam_step, sgd_init, sgd_step, vogn_init, vogn_step,
                         vogn_update)
from btabl.synthetic import planted_benchmark, write_planted_directory
from btabl.training import fit, network_shape, score_split

FI2010_ENV = "BTABL_FI2010_DIR"


@pytest.mark.criterion(1, "per-sample gradients match central differences")
def test_gradient_correctness(record_property):
    shape = TablShape(4, 5, 3, 1)
    net = NetworkShape(head=shape)
    start, worst, pure, tiny = time.perf_counter(), 0.0, 0.0, 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        p = TablParams(rng.normal(size=(3, 4)), rng.normal(size=(5, 5)), rng.normal(size=(5, 1)),
                       rng.normal(size=(3, 1)), rng.uniform(0.05, 0.95))
        x, label = rng.normal(size=(4, 5)), int(rng.integers(3))
        _, cache = tabl_forward(x, p, shape)
        g = tabl_backward_per_sample(cache, label, p)
        theta = p.flatten()
        for i in range(len(theta)):
            tp, tm = theta.copy(), theta.copy()
            tp[i] += 1e-5
            tm[i] -= 1e-5
            fd = (network_forward(tm, net, x[None])[0][0, label]
                  - network_forward(tp, net, x[None])[0][0, label]) / 2e-5
            worst = max(worst, abs(g[i] - fd) / max(abs(g[i]), abs(fd), 1e-3))
            if max(abs(g[i]), abs(fd)) >= 1e-3:
                pure = max(pure, abs(g[i] - fd) / max(abs(g[i]), abs(fd)))
            else:
                tiny = max(tiny, abs(g[i] - fd))
    elapsed = time.perf_counter() - start
    record_property("max_rel_err", f"{worst:.2e}")
    record_property("pure_rel_err_large_coords", f"{pure:.2e}")
    record_property("abs_err_coords_below_1e-3", f"{tiny:.1e}")
    record_property("seconds", f"{elapsed:.2f}")
    assert worst < 1e-5 and elapsed < 10


@pytest.mark.criterion(2, "VOGN scales stay valid; scalar example exact")
def test_vogn_invariants(record_property):
    rng = np.random.default_rng(2024)
    min_s, min_var, calls = np.inf, np.inf, 0
    for _ in range(100):
        P = int(rng.integers(1, 8))
        st = vogn_init(P, int(rng.integers(1, 5000)), rng.uniform(1e-3, 100), rng.uniform(1e-4, 1),
                       rng.uniform(0, 0.999), rng.uniform(0.5, 1.0), mu=rng.normal(size=P))
        for _ in range(100):
            G = rng.normal(size=(int(rng.integers(1, 9)), P)) * 10 ** rng.uniform(-8, 4)
            st = vogn_step(st, G)
            min_s, min_var = min(min_s, st.s.min()), min(min_var, st.sigma2.min())
            calls += 1
    state = VariationalState(np.array([1.0]), np.array([0.9]), 0.1, 10, 0.5)
    new = vogn_update(state, np.array([0.0]), np.array([0.3]))
    s_ref = 0.5 * 0.9 + 0.5 * 0.3
    mu_ref = 1 - 0.5 * (0.0 + 0.1 * 1.0) / (s_ref + 0.1)
    err = max(abs(new.s[0] - s_ref), abs(new.mu[0] - mu_ref), abs(new.s[0] - 0.6), abs(new.mu[0] - (1 - 0.05 / 0.7)))
    record_property("calls", calls)
    record_property("min_s", f"{min_s:.3g}")
    record_property("min_sigma2", f"{min_var:.3g}")
    record_property("scalar_err", f"{err:.1e}")
    assert calls == 10_000 and min_s >= 0 and min_var > 0 and err < 1e-12


@pytest.mark.criterion(3, "VOGN reaches the regularized minimizer of a convex quadratic")
def test_vogn_fixed_point(record_property):
    rng = np.random.default_rng(3)
    M, P = 32, 5
    A, c = rng.normal(size=(M, P)), rng.normal(size=M)
    st = vogn_init(P, M, prior_precision=0.1 * M, beta=0.05)
    steps = 0
    for steps in range(1, 5001):
        G = (A @ st.mu - c)[:, None] * A
        st = vogn_step(st, G)
        resid = np.linalg.norm(((A @ st.mu - c)[:, None] * A).mean(axis=0) + st.alpha_tilde * st.mu)
        if resid < 1e-3:
            break
    record_property("alpha_tilde", st.alpha_tilde)
    record_property("steps", steps)
    record_property("residual", f"{resid:.2e}")
    assert st.alpha_tilde == pytest.approx(0.1) and resid < 1e-3


@pytest.mark.criterion(4, "ADAM and SGD solve a 1-D quadratic and match scalar recurrences")
def test_optimizer_baselines(record_property):
    st, m, v, w = adam_init([0.0], lr=0.1), 0.0, 0.0, 0.0
    for t in range(1, 501):
        st = adam_step(st, 2 * (st.params - 3))
        g = 2 * (w - 3)
        m, v = 0.9 * m + 0.1 * g, 0.999 * v + 0.001 * g * g
        w -= 0.1 * (m / (1 - 0.9 ** t)) / ((v / (1 - 0.999 ** t)) ** 0.5 + 1e-8)
    adam_err, adam_gap = abs(st.params[0] - 3), abs(st.params[0] - w)

    st, vel, w = sgd_init([0.0], lr=0.01, momentum=0.9), 0.0, 0.0
    for _ in range(2000):
        st = sgd_step(st, 2 * (st.params - 3))
        vel = 0.9 * vel + 2 * (w - 3)
        w -= 0.01 * vel
    sgd_err, sgd_gap = abs(st.params[0] - 3), abs(st.params[0] - w)
    record_property("adam_err", f"{adam_err:.2e}")
    record_property("sgd_err", f"{sgd_err:.2e}")
    assert adam_err < 1e-2 and sgd_err < 1e-2 and adam_gap < 1e-12 and sgd_gap < 1e-12


@pytest.mark.criterion(5, "micro scores and weighted recall equal accuracy exactly")
def test_metric_identities(record_property):
    rng = np.random.default_rng(5)
    bad = 0
    for _ in range(1000):
        C = int(rng.integers(2, 6))
        counts = rng.integers(0, 50, size=(C, C))
        counts[0, 0] += 1
        rep = multiclass_metrics(ConfusionMatrix(counts))
        p, r, f = micro_scores(ConfusionMatrix(counts))
        acc = np.trace(counts) / counts.sum()
        bad += not (p == r == f == rep.accuracy == acc and rep.weighted_recall == acc)
    record_property("violations", bad)
    assert bad == 0


@pytest.mark.criterion(6, "grid AUROC agrees with the pairwise oracle")
def test_auroc_oracle(record_property):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(50):
        truths = rng.random(200) < rng.uniform(0.2, 0.8)
        scores = np.clip(rng.normal(0.5 + rng.uniform(0, 0.3) * truths, rng.uniform(0.1, 0.3)), 0, 1)
        worst = max(worst, abs(roc_curve(scores, truths).auroc - pairwise_auroc(scores, truths)))
    record_property("max_abs_diff", f"{worst:.4f}")
    assert worst < 0.02


@pytest.mark.criterion(7, "calibration errors on constructed sets")
def test_calibration(record_property):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        # every bin holds scores whose mean equals the positive share in that bin
        scores, truths = [], []
        for k in range(1, 20):
            n_pos = int(rng.integers(0, 20))
            q = n_pos / 20
            if not (k - 1) / 20 <= q < k / 20 or q == 0:
                continue
            scores += [q] * 20
            truths += [1] * n_pos + [0] * (20 - n_pos)
        scores += [0.5] * 10
        truths += [1, 0] * 5
        c = calibration(np.array(scores), np.array(truths))
        worst = max(worst, abs(c.ece), c.ecd)
    neg = calibration(np.full(100, 0.9), np.zeros(100))
    record_property("max_calibrated_err", f"{worst:.1e}")
    record_property("signed_ece_all_negative", repr(neg.ece))
    assert worst < 1e-12 and neg.ece == -0.9


@pytest.mark.criterion(8, "predictive pipeline: zero variance, normalization, determinism")
def test_predictive_machinery(record_property):
    train, test = planted_benchmark(n_train=10, n_test=500, seed=8)
    X, _ = stack_windows(test)
    net = NetworkShape(head=TablShape(40, 10, 3, 1))
    theta = np.random.default_rng(8).normal(size=net.n_params) * 0.3
    frozen = VariationalState(theta, np.full(net.n_params, np.inf), 0.01, 100)
    assert np.all(frozen.sigma2 == 0)
    probs = predictive_sets(PosteriorPredictor(net, frozen), X, 10, seed=1)
    labels = np.exp(network_forward(theta, net, X)[0]).argmax(axis=1)
    mismatches = int(np.sum(summarize_array(probs)["predicted"] != labels))

    live = PosteriorPredictor(net, vogn_init(net.n_params, 1000, mu=theta))
    a = predictive_sets(live, X, 50, seed=4)
    b = predictive_sets(live, X, 50, seed=4)
    row_err = float(np.abs(a.mean(axis=1).sum(axis=1) - 1).max())
    record_property("argmax_mismatches", mismatches)
    record_property("max_row_sum_err", f"{row_err:.1e}")
    assert mismatches == 0 and row_err < 1e-9 and np.array_equal(a, b)


@pytest.fixture(scope="module")
def benchmark_data():
    train, test = planted_benchmark(n_train=6000, n_test=2000, seed=0)
    return stack_windows(train), stack_windows(test)


OPTIMIZER_RUNS = {
    "adam": ({}, 0.90),
    "vogn": ({"vogn_momentum": 0.0, "vogn_h_decay": 1.0}, 0.90),
    "sgd": ({}, 0.80),
}


@pytest.mark.criterion(9, "planted-pattern benchmark: ADAM/VOGN >= 0.90, SGD >= 0.80 in 50 epochs")
def test_learnability_benchmark(benchmark_data, record_property):
    (Xtr, ytr), (Xte, yte) = benchmark_data
    record_property("majority", f"{np.bincount(yte).max() / len(yte):.3f}")
    ok = True
    for kind, (extra, floor) in OPTIMIZER_RUNS.items():
        cfg = RunConfig(optimizer=kind, epochs=50, seed=0, **extra).validate()
        net = network_shape(cfg)
        start = time.perf_counter()
        result = fit(cfg, net, (Xtr, ytr))
        acc = score_split(cfg, net, result.state, Xte, yte, cfg.ns_test if kind == "vogn" else 1).accuracy
        elapsed = time.perf_counter() - start
        record_property(kind, f"{acc:.4f} in {elapsed:.0f}s")
        ok &= acc >= floor and elapsed < 300
    assert ok


@pytest.mark.criterion(10, "FI-2010 sanity floor (needs a data directory)")
def test_fi2010_floor(tmp_path, record_property):
    root = os.environ.get(FI2010_ENV)
    if not root:
        pytest.skip(f"set {FI2010_ENV} to a one-stock FI-2010 directory to run")
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"data_dir": root, "optimizer": "vogn", "epochs": 50, "zscore": True,
                                    "seed": 0}))
    assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "run")]) == 0
    import csv
    with open(tmp_path / "run" / "learning_curve.csv") as fh:
        val = [r for r in csv.DictReader(fh) if r["split"] == "validation"]
    acc = float(val[-1]["accuracy"])
    record_property("validation_micro", f"{acc:.4f}")
    assert acc >= 0.67 + 0.03


@pytest.mark.criterion(11, "train + evaluate twice gives byte-identical CSV bundles")
def test_end_to_end_determinism(tmp_path, record_property):
    data = write_planted_directory(tmp_path / "data", n_stocks=2, n_days=4, events_per_day=300, seed=11)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"data_dir": str(data), "optimizer": "vogn", "epochs": 4, "test_days": 1,
                               "batch_size": 64, "ns_val": 5, "ns_test": 20, "seed": 7}))
    bundles = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["train", "--config", str(cfg), "--out", str(out / "train")]) == 0
        assert main(["evaluate", "--checkpoint", str(out / "train" / "checkpoint_last.json"), "--data", str(data),
                     "--out", str(out / "eval"), "--per-stock"]) == 0
        files = sorted(Path(out).rglob("*.csv"))
        bundles.append({str(f.relative_to(out)): f.read_bytes() for f in files})
    record_property("csv_files", len(bundles[0]))
    assert len(bundles[0]) == 12 and bundles[0] == bundles[1]

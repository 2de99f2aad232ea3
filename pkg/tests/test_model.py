import math

import numpy as np
import pytest

from btabl.model import (NetworkShape, TablParams, TablShape, BilinearShape, batch_forward_backward,
                         init_params, log_softmax_nll, network_backward, network_forward, split_params,
                         tabl_backward_per_sample, tabl_forward)

SMALL = TablShape(D=4, T=5, D_out=3, T_out=1)


def random_params(shape, rng, lam=None):
    return TablParams(rng.normal(size=(shape.D_out, shape.D)), rng.normal(size=(shape.T, shape.T)),
                      rng.normal(size=(shape.T, shape.T_out)), rng.normal(size=(shape.D_out, shape.T_out)),
                      rng.uniform(0.1, 0.9) if lam is None else lam)


def transcription(x, p, act="identity"):
    """The five layer equations written out with explicit loops."""
    Dp, D = p.W1.shape
    T = x.shape[1]
    xbar = [[sum(p.W1[i, k] * x[k, t] for k in range(D)) for t in range(T)] for i in range(Dp)]
    E = [[sum(xbar[i][k] * p.W[k, t] for k in range(T)) for t in range(T)] for i in range(Dp)]
    A = []
    for row in E:
        z = [math.exp(v - max(row)) for v in row]
        A.append([v / sum(z) for v in z])
    lam = min(max(p.lam, 0.0), 1.0)
    xt = [[lam * xbar[i][t] * A[i][t] + (1 - lam) * xbar[i][t] for t in range(T)] for i in range(Dp)]
    Tp = p.W2.shape[1]
    Y = [[sum(xt[i][k] * p.W2[k, j] for k in range(T)) + p.B[i, j] for j in range(Tp)] for i in range(Dp)]
    Y = np.array(Y)
    return np.maximum(Y, 0) if act == "relu" else Y


@pytest.mark.parametrize("act", ["identity", "relu"])
def test_forward_matches_transcription(act):
    rng = np.random.default_rng(0)
    shape = TablShape(2, 3, 2, 2, act)
    p = random_params(shape, rng)
    x = rng.normal(size=(2, 3))
    logits, _ = tabl_forward(x, p, shape)
    np.testing.assert_allclose(logits, transcription(x, p, act).ravel(), rtol=1e-12, atol=1e-12)


def test_identity_layer():
    shape = TablShape(3, 4, 3, 4)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 4))
    p = TablParams(np.eye(3), rng.normal(size=(4, 4)), np.eye(4), np.zeros((3, 4)), 0.0)
    logits, _ = tabl_forward(x, p, shape)
    np.testing.assert_allclose(logits.reshape(3, 4), x, rtol=0, atol=1e-15)


def test_lambda_zero_bypasses_attention():
    rng = np.random.default_rng(2)
    p = random_params(SMALL, rng, lam=0.0)
    x = rng.normal(size=(4, 5))
    y0, _ = tabl_forward(x, p, SMALL)
    p.W = p.W + rng.normal(size=p.W.shape)
    y1, _ = tabl_forward(x, p, SMALL)
    assert np.array_equal(y0, y1)


def test_nll_cases():
    loss, lp = log_softmax_nll([0.0, 0.0, 0.0], 0)
    assert loss == pytest.approx(math.log(3), rel=1e-15)
    np.testing.assert_allclose(np.exp(lp), 1 / 3, rtol=1e-15)
    assert log_softmax_nll([100.0, 0.0, 0.0], 0)[0] < 1e-40
    rng = np.random.default_rng(3)
    for _ in range(20):
        z = rng.normal(size=3) * 3
        label = int(rng.integers(3))
        naive = -math.log(math.exp(z[label]) / sum(math.exp(v) for v in z))
        assert log_softmax_nll(z, label)[0] == pytest.approx(naive, rel=1e-12)
    with pytest.raises(IndexError):
        log_softmax_nll([0.0, 1.0], 2)


def fd_gradient(x, label, theta, shape, h=1e-5):
    net = NetworkShape(head=shape)
    out = np.empty_like(theta)
    for i in range(len(theta)):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        fp = -network_forward(tp, net, x[None])[0][0, label]
        fm = -network_forward(tm, net, x[None])[0][0, label]
        out[i] = (fp - fm) / (2 * h)
    return out


def grad_error(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p = random_params(SMALL, rng)
    x = rng.normal(size=(4, 5))
    label = int(rng.integers(3))
    _, cache = tabl_forward(x, p, SMALL)
    g = tabl_backward_per_sample(cache, label, p)
    assert grad_error(g, fd_gradient(x, label, p.flatten(), SMALL)).max() < 1e-5


def test_gradient_through_hidden_layers():
    rng = np.random.default_rng(11)
    net = NetworkShape(TablShape(3, 2, 3, 1), (BilinearShape(4, 5, 3, 2, "relu"),))
    theta = rng.normal(size=net.n_params)
    theta[-1] = 0.4
    X = rng.normal(size=(1, 4, 5))
    lp, cache = network_forward(theta, net, X)
    g = network_backward(cache, [1], theta, net)[0]
    fd = np.empty_like(theta)
    for i in range(len(theta)):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += 1e-5
        tm[i] -= 1e-5
        fd[i] = (network_forward(tm, net, X)[0][0, 1] - network_forward(tp, net, X)[0][0, 1]) / 2e-5
    assert grad_error(g, fd).max() < 1e-5


def test_saturated_loss_has_vanishing_gradient():
    shape = TablShape(1, 1, 3, 1)
    p = TablParams(np.array([[40.0], [0.0], [0.0]]), np.zeros((1, 1)), np.ones((1, 1)), np.zeros((3, 1)), 0.0)
    _, cache = tabl_forward(np.ones((1, 1)), p, shape)
    assert np.linalg.norm(tabl_backward_per_sample(cache, 0, p)) < 1e-12


def test_lambda_gradient_vanishes_for_single_step():
    rng = np.random.default_rng(4)
    shape = TablShape(4, 1, 3, 1)
    p = random_params(shape, rng, lam=0.0)
    _, cache = tabl_forward(rng.normal(size=(4, 1)), p, shape)
    assert tabl_backward_per_sample(cache, 1, p)[-1] == 0.0


def test_lambda_gradient_zeroed_outside_unit_interval():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 5))
    for lam in (-0.5, 1.5):
        p = random_params(SMALL, rng, lam=lam)
        _, cache = tabl_forward(x, p, SMALL)
        for label in range(3):
            g = tabl_backward_per_sample(cache, label, p)[-1]
            assert g == 0.0 or (lam < 0 and g < 0) or (lam > 1 and g > 0)


def test_flatten_roundtrip():
    rng = np.random.default_rng(6)
    p = random_params(SMALL, rng)
    theta = p.flatten()
    assert len(theta) == SMALL.n_params == 4 * 3 + 25 + 5 + 3 + 1
    q = TablParams.unflatten(theta, SMALL)
    assert np.array_equal(q.flatten(), theta)
    assert theta[-1] == p.lam and np.array_equal(theta[:12], p.W1.ravel())


def test_default_shape_parameter_count():
    assert TablShape(40, 10, 3, 1).n_params == 120 + 100 + 10 + 3 + 1


def test_batch_cases():
    rng = np.random.default_rng(7)
    theta = random_params(SMALL, rng).flatten()
    X = rng.normal(size=(8, 4, 5))
    y = rng.integers(3, size=8)
    loss1, G1, g1 = batch_forward_backward(X[:1], theta, SMALL, y[:1])
    assert np.array_equal(g1, G1[0])
    _, G4, _ = batch_forward_backward(np.repeat(X[:1], 4, axis=0), theta, SMALL, np.repeat(y[:1], 4))
    assert all(np.array_equal(G4[i], G4[0]) for i in range(4))
    loss, G, g = batch_forward_backward(X, theta, SMALL, y)
    singles = [batch_forward_backward(X[i:i + 1], theta, SMALL, y[i:i + 1]) for i in range(8)]
    np.testing.assert_allclose(g, sum(s[2] for s in singles) / 8, rtol=1e-12, atol=1e-15)
    assert loss == pytest.approx(sum(s[0] for s in singles) / 8, rel=1e-12)


def test_init_params_shapes():
    net = NetworkShape(TablShape(40, 10, 3, 1))
    theta = init_params(net, np.random.default_rng(0))
    assert theta.shape == (net.n_params,) and theta[-1] == 0.5
    (head,) = split_params(theta, net)[-1:]
    assert head.W.shape == (10, 10)

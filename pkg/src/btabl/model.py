"""Temporal Attention-augmented Bilinear layer (TABL) with hand-derived gradients.

Forward pass of one TABL layer on a ``D x T`` input::

    Xbar   = W1 @ X
    E      = Xbar @ W
    A      = row_softmax(E)
    Xtilde = lam * (Xbar * A) + (1 - lam) * Xbar
    Y      = phi(Xtilde @ W2 + B)

The network output ``Y`` is flattened row-major into class logits and fed to
a log-softmax head with negative log-likelihood loss. Gradients are derived
by hand and returned per sample, since the VOGN scale update needs squared
per-sample gradients rather than the batch mean.

Everything is batched over a leading sample axis internally; the
single-sample functions are thin wrappers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import ShapeError, log_softmax, row_softmax
from .lobdata import ContractError

ACTIVATIONS = ("identity", "relu")

# checkpoint portability depends on this order never changing
FLATTEN_ORDER = ("W1", "W", "W2", "B", "lambda")
BILINEAR_FLATTEN_ORDER = ("W1", "W2", "B")


@dataclass(frozen=True)
class TablShape:
    D: int = 40
    T: int = 10
    D_out: int = 3
    T_out: int = 1
    activation: str = "identity"

    def __post_init__(self):
        if min(self.D, self.T, self.D_out, self.T_out) < 1:
            raise ValueError(f"all TABL dimensions must be >= 1: {self}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_params(self) -> int:
        return self.D_out * self.D + self.T * self.T + self.T * self.T_out + self.D_out * self.T_out + 1

    @property
    def n_outputs(self) -> int:
        return self.D_out * self.T_out


@dataclass(frozen=True)
class BilinearShape:
    """Plain bilinear layer ``phi(W1 @ X @ W2 + B)``, stackable before the TABL head."""
    D: int
    T: int
    D_out: int
    T_out: int
    activation: str = "relu"

    def __post_init__(self):
        if min(self.D, self.T, self.D_out, self.T_out) < 1:
            raise ValueError(f"all bilinear dimensions must be >= 1: {self}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_params(self) -> int:
        return self.D_out * self.D + self.T * self.T_out + self.D_out * self.T_out


@dataclass(frozen=True)
class NetworkShape:
    head: TablShape = field(default_factory=TablShape)
    hidden: tuple = ()

    def __post_init__(self):
        dims = [(l.D, l.T, l.D_out, l.T_out) for l in self.hidden] + [(self.head.D, self.head.T, 0, 0)]
        for (_, _, d_out, t_out), (d_in, t_in, _, _) in zip(dims, dims[1:]):
            if (d_out, t_out) != (d_in, t_in):
                raise ValueError(f"layer output {d_out}x{t_out} does not feed next input {d_in}x{t_in}")

    @property
    def input_shape(self):
        first = self.hidden[0] if self.hidden else self.head
        return first.D, first.T

    @property
    def n_classes(self) -> int:
        return self.head.n_outputs

    @property
    def n_params(self) -> int:
        return sum(l.n_params for l in self.hidden) + self.head.n_params

    @property
    def lambda_index(self) -> int:
        return self.n_params - 1

    def to_dict(self) -> dict:
        def layer(l):
            return {"D": l.D, "T": l.T, "D_out": l.D_out, "T_out": l.T_out, "activation": l.activation}
        return {"hidden": [layer(l) for l in self.hidden], "head": layer(self.head)}

    @classmethod
    def from_dict(cls, d) -> "NetworkShape":
        return cls(TablShape(**d["head"]), tuple(BilinearShape(**h) for h in d.get("hidden", [])))


def _as_network(shape) -> NetworkShape:
    return shape if isinstance(shape, NetworkShape) else NetworkShape(head=shape)


@dataclass
class TablParams:
    W1: np.ndarray
    W: np.ndarray
    W2: np.ndarray
    B: np.ndarray
    lam: float  # unconstrained; clamped to [0, 1] when used

    @property
    def lam_clamped(self) -> float:
        return float(min(max(self.lam, 0.0), 1.0))

    def check(self, shape: TablShape):
        want = {"W1": (shape.D_out, shape.D), "W": (shape.T, shape.T),
                "W2": (shape.T, shape.T_out), "B": (shape.D_out, shape.T_out)}
        for name, s in want.items():
            if getattr(self, name).shape != s:
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {s}")

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.W.ravel(), self.W2.ravel(), self.B.ravel(), [self.lam]])

    @classmethod
    def unflatten(cls, vec, shape: TablShape) -> "TablParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (shape.n_params,):
            raise ShapeError(f"parameter vector has shape {vec.shape}, expected ({shape.n_params},)")
        sizes = [(shape.D_out, shape.D), (shape.T, shape.T), (shape.T, shape.T_out), (shape.D_out, shape.T_out)]
        parts, i = [], 0
        for r, c in sizes:
            parts.append(vec[i:i + r * c].reshape(r, c))
            i += r * c
        return cls(*parts, float(vec[i]))


@dataclass
class BilinearParams:
    W1: np.ndarray
    W2: np.ndarray
    B: np.ndarray

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.W2.ravel(), self.B.ravel()])

    @classmethod
    def unflatten(cls, vec, shape: BilinearShape) -> "BilinearParams":
        sizes = [(shape.D_out, shape.D), (shape.T, shape.T_out), (shape.D_out, shape.T_out)]
        parts, i = [], 0
        for r, c in sizes:
            parts.append(vec[i:i + r * c].reshape(r, c))
            i += r * c
        return cls(*parts)


def split_params(theta, net: NetworkShape):
    """Views of a flat parameter vector as per-layer parameter objects."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (net.n_params,):
        raise ShapeError(f"parameter vector has shape {theta.shape}, expected ({net.n_params},)")
    layers, i = [], 0
    for l in net.hidden:
        layers.append(BilinearParams.unflatten(theta[i:i + l.n_params], l))
        i += l.n_params
    return layers, TablParams.unflatten(theta[i:], net.head)


def init_params(net: NetworkShape, rng: np.random.Generator) -> np.ndarray:
    """Point-estimate initialization for the non-Bayesian optimizers.

    Projections are scaled by fan-in, the attention weights start at the
    uniform value ``1/T`` and the mixing coefficient at 0.5.
    """
    parts = []
    for l in net.hidden:
        parts += [rng.normal(0, 1 / np.sqrt(l.D), l.D_out * l.D),
                  rng.normal(0, 1 / np.sqrt(l.T), l.T * l.T_out),
                  np.zeros(l.D_out * l.T_out)]
    h = net.head
    parts += [rng.normal(0, 1 / np.sqrt(h.D), h.D_out * h.D),
              np.full(h.T * h.T, 1.0 / h.T) + rng.normal(0, 0.01, h.T * h.T),
              rng.normal(0, 1 / np.sqrt(h.T), h.T * h.T_out),
              np.zeros(h.D_out * h.T_out),
              [0.5]]
    return np.concatenate(parts)


def _act(z, kind):
    return z if kind == "identity" else np.maximum(z, 0.0)


def _act_grad(z, dy, kind):
    return dy if kind == "identity" else dy * (z > 0)


@dataclass
class ForwardCache:
    X: np.ndarray
    Xbar: np.ndarray
    E: np.ndarray
    A: np.ndarray
    Xtilde: np.ndarray
    Z: np.ndarray
    Y: np.ndarray
    log_probs: np.ndarray | None
    shape: TablShape
    hidden_caches: list = field(default_factory=list)


def _tabl_forward_batch(X, p: TablParams, shape: TablShape) -> ForwardCache:
    lam = p.lam_clamped
    Xbar = np.einsum("pd,mdt->mpt", p.W1, X)
    E = Xbar @ p.W
    A = row_softmax(E)
    Xtilde = lam * (Xbar * A) + (1.0 - lam) * Xbar
    Z = Xtilde @ p.W2 + p.B
    Y = _act(Z, shape.activation)
    return ForwardCache(X, Xbar, E, A, Xtilde, Z, Y, None, shape)


def _tabl_backward_batch(c: ForwardCache, dY, p: TablParams):
    """Per-sample gradients ``(M, P_layer)`` and the input gradient ``(M, D, T)``."""
    lam = p.lam_clamped
    dZ = _act_grad(c.Z, dY, c.shape.activation)
    gB = dZ
    gW2 = np.einsum("mit,mio->mto", c.Xtilde, dZ)
    dXt = dZ @ p.W2.T
    glam = np.einsum("mit,mit->m", dXt, c.Xbar * c.A - c.Xbar)
    # lambda is clamped in the forward pass; block gradient that pushes it further out
    if p.lam <= 0.0:
        glam = np.where(glam > 0, 0.0, glam)
    elif p.lam >= 1.0:
        glam = np.where(glam < 0, 0.0, glam)
    dA = lam * dXt * c.Xbar
    dXbar = dXt * (lam * c.A + (1.0 - lam))
    # softmax Jacobian, row by row
    dE = c.A * (dA - np.sum(dA * c.A, axis=-1, keepdims=True))
    gW = np.einsum("mit,mis->mts", c.Xbar, dE)
    dXbar = dXbar + dE @ p.W.T
    gW1 = np.einsum("mit,mdt->mid", dXbar, c.X)
    dX = np.einsum("pd,mpt->mdt", p.W1, dXbar)
    M = dY.shape[0]
    G = np.concatenate([gW1.reshape(M, -1), gW.reshape(M, -1), gW2.reshape(M, -1),
                        gB.reshape(M, -1), glam[:, None]], axis=1)
    return G, dX


def _bilinear_forward_batch(X, p: BilinearParams, shape: BilinearShape):
    H = np.einsum("pd,mdt->mpt", p.W1, X)
    Z = H @ p.W2 + p.B
    return (X, H, Z), _act(Z, shape.activation)


def _bilinear_backward_batch(cache, dY, p: BilinearParams, shape: BilinearShape):
    X, H, Z = cache
    dZ = _act_grad(Z, dY, shape.activation)
    gW2 = np.einsum("mit,mio->mto", H, dZ)
    dH = dZ @ p.W2.T
    gW1 = np.einsum("mit,mdt->mid", dH, X)
    dX = np.einsum("pd,mpt->mdt", p.W1, dH)
    M = dY.shape[0]
    return np.concatenate([gW1.reshape(M, -1), gW2.reshape(M, -1), dZ.reshape(M, -1)], axis=1), dX


def _check_input(X, net: NetworkShape):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[1:] != net.input_shape:
        raise ShapeError(f"input batch has shape {X.shape}, expected (M, {net.input_shape[0]}, {net.input_shape[1]})")
    return X


def network_forward(theta, net: NetworkShape, X, input_mask=None):
    """Log-probabilities ``(M, C)`` and the layer caches for a batch."""
    net = _as_network(net)
    X = _check_input(X, net)
    if input_mask is not None:
        X = X * input_mask
    hidden, head = split_params(theta, net)
    caches, h = [], X
    for p, l in zip(hidden, net.hidden):
        cache, h = _bilinear_forward_batch(h, p, l)
        caches.append(cache)
    c = _tabl_forward_batch(h, head, net.head)
    c.hidden_caches = caches
    c.log_probs = log_softmax(c.Y.reshape(len(X), -1))
    return c.log_probs, c


def network_backward(cache: ForwardCache, labels, theta, net: NetworkShape) -> np.ndarray:
    """Per-sample NLL gradients ``(M, P)`` from a forward cache."""
    net = _as_network(net)
    hidden, head = split_params(theta, net)
    labels = np.asarray(labels, dtype=np.int64)
    M, C = cache.log_probs.shape
    if labels.shape != (M,):
        raise ShapeError(f"expected {M} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= C:
        raise IndexError(f"labels must lie in [0, {C})")
    dlogits = np.exp(cache.log_probs)
    dlogits[np.arange(M), labels] -= 1.0
    G_head, dX = _tabl_backward_batch(cache, dlogits.reshape(cache.Y.shape), head)
    blocks = [G_head]
    for p, l, hc in reversed(list(zip(hidden, net.hidden, cache.hidden_caches))):
        G_l, dX = _bilinear_backward_batch(hc, dX, p, l)
        blocks.append(G_l)
    return np.concatenate(blocks[::-1], axis=1)


def nll(log_probs, labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    return -log_probs[np.arange(len(labels)), labels]


def tabl_forward(x, params: TablParams, shape: TablShape):
    """Single-sample forward pass; returns ``(logits, cache)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (shape.D, shape.T):
        raise ShapeError(f"input has shape {x.shape}, expected ({shape.D}, {shape.T})")
    params.check(shape)
    c = _tabl_forward_batch(x[None], params, shape)
    logits = c.Y.reshape(-1)
    c.log_probs = log_softmax(logits)[None]
    return logits, c


def log_softmax_nll(logits, label: int):
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[-1]:
        raise IndexError(f"label {label} outside [0, {logits.shape[-1]})")
    lp = log_softmax(logits)
    return float(-lp[label]), lp


def tabl_backward_per_sample(cache: ForwardCache, label: int, params: TablParams) -> np.ndarray:
    net = NetworkShape(head=cache.shape)
    return network_backward(cache, [label], params.flatten(), net)[0]


def batch_forward_backward(batch, params, shape, labels=None, input_mask=None):
    """Mean loss, per-sample gradient matrix ``(M, P)`` and mean gradient.

    ``batch`` is a sequence of windows (labels taken from them) or an
    ``(M, D, T)`` array with explicit ``labels``. ``params`` is a
    :class:`TablParams` or a flat vector matching ``shape``.
    """
    net = _as_network(shape)
    if labels is None:
        if len(batch) == 0:
            raise ContractError("batch_forward_backward needs a non-empty batch")
        X = np.stack([w.x for w in batch])
        labels = np.array([w.label for w in batch], dtype=np.int64)
    else:
        X = np.asarray(batch, dtype=np.float64)
        if len(X) == 0:
            raise ContractError("batch_forward_backward needs a non-empty batch")
    theta = params.flatten() if isinstance(params, TablParams) else np.asarray(params, dtype=np.float64)
    log_probs, cache = network_forward(theta, net, X, input_mask)
    G = network_backward(cache, labels, theta, net)
    return float(nll(log_probs, labels).mean()), G, G.mean(axis=0)

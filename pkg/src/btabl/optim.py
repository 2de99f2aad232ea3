"""Parameter updates: VOGN (mean-field Gaussian natural-gradient VI), ADAM and SGD.

All steps are pure: they return a new state and leave the old one intact.

VOGN keeps a mean ``mu`` and a scale accumulator ``s`` per parameter. The
posterior variance is never stored; it is ``1 / (N * (s + alpha_tilde))``
with ``alpha_tilde = alpha / N``. Each step draws ``theta ~ N(mu, sigma^2)``,
collects per-sample gradients at ``theta`` and updates::

    h_hat = mean_i(g_i ** 2)                       # per-sample squared grads
    s     = (1 - beta) * s + beta * h_hat
    mu    = mu - beta * (g_mean + alpha_tilde * mu) / (s + alpha_tilde)

Two optional knobs extend the literal update: ``grad_momentum`` smooths
``g_mean`` with an exponential moving average, and ``h_decay`` shrinks ``s``
by a constant factor before the ``s`` update. Their defaults (0 and 1)
reproduce the plain equations above.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .lobdata import ContractError


@dataclass(frozen=True)
class VariationalState:
    mu: np.ndarray
    s: np.ndarray
    alpha_tilde: float
    N: int
    beta: float = 0.01
    grad_momentum: float = 0.0
    h_decay: float = 1.0
    step: int = 0
    grad_avg: np.ndarray | None = None

    @property
    def sigma2(self) -> np.ndarray:
        return 1.0 / (self.N * (self.s + self.alpha_tilde))

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(self.sigma2)


def vogn_init(n_params: int, N: int, prior_precision: float = 1.0, beta: float = 0.01,
              grad_momentum: float = 0.0, h_decay: float = 1.0, mu=None) -> VariationalState:
    """State whose initial posterior equals the prior ``N(0, I / alpha)`` where possible.

    ``s0 = max(1/N - alpha_tilde, 0)``, so ``sigma^2 = 1`` for ``alpha <= 1``.
    """
    if N < 1 or prior_precision <= 0:
        raise ValueError("need N >= 1 and a positive prior precision")
    alpha_tilde = prior_precision / N
    s0 = max(1.0 / N - alpha_tilde, 0.0)
    mu = np.zeros(n_params) if mu is None else np.array(mu, dtype=np.float64)
    return VariationalState(mu, np.full(n_params, s0), alpha_tilde, N, beta, grad_momentum,
                            h_decay, 0, np.zeros(n_params))


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def vogn_sample(state: VariationalState, seed) -> np.ndarray:
    """Draw ``theta = mu + sigma * eps`` with ``eps ~ N(0, I)``."""
    eps = _rng(seed).standard_normal(state.mu.shape)
    return state.mu + state.sigma * eps


def vogn_update(state: VariationalState, g_mean, h_hat) -> VariationalState:
    """Apply one VOGN step given the mean gradient and the squared-gradient average."""
    g_mean = np.asarray(g_mean, dtype=np.float64)
    h_hat = np.asarray(h_hat, dtype=np.float64)
    b = state.beta
    s = (1.0 - b) * (state.h_decay * state.s) + b * h_hat
    prev = state.grad_avg if state.grad_avg is not None else np.zeros_like(state.mu)
    grad_avg = state.grad_momentum * prev + (1.0 - state.grad_momentum) * g_mean
    mu = state.mu - b * (grad_avg + state.alpha_tilde * state.mu) / (s + state.alpha_tilde)
    return replace(state, mu=mu, s=s, grad_avg=grad_avg, step=state.step + 1)


def vogn_step(state: VariationalState, grads) -> VariationalState:
    """One VOGN step from an ``(M, P)`` matrix of per-sample gradients taken at a posterior draw."""
    G = np.asarray(grads, dtype=np.float64)
    if G.ndim != 2 or G.shape[0] == 0:
        raise ContractError("vogn_step needs a non-empty (M, P) gradient matrix")
    return vogn_update(state, G.mean(axis=0), np.mean(G * G, axis=0))


def vogn_warmup_step(state: VariationalState, g_mean) -> VariationalState:
    """Plain gradient step on the mean; ``s`` is left untouched."""
    return replace(state, mu=state.mu - state.beta * np.asarray(g_mean), step=state.step + 1)


@dataclass(frozen=True)
class AdamState:
    params: np.ndarray
    m: np.ndarray
    v: np.ndarray
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0


def adam_init(params, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    params = np.array(params, dtype=np.float64)
    return AdamState(params, np.zeros_like(params), np.zeros_like(params), lr, beta1, beta2, eps, 0)


def adam_step(state: AdamState, grad) -> AdamState:
    g = np.asarray(grad, dtype=np.float64)
    t = state.step + 1
    m = state.beta1 * state.m + (1 - state.beta1) * g
    v = state.beta2 * state.v + (1 - state.beta2) * g * g
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    params = state.params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, params=params, m=m, v=v, step=t)


@dataclass(frozen=True)
class SgdState:
    params: np.ndarray
    velocity: np.ndarray
    lr: float = 0.01
    momentum: float = 0.99
    step: int = 0


def sgd_init(params, lr=0.01, momentum=0.99) -> SgdState:
    params = np.array(params, dtype=np.float64)
    return SgdState(params, np.zeros_like(params), lr, momentum, 0)


def sgd_step(state: SgdState, grad) -> SgdState:
    velocity = state.momentum * state.velocity + np.asarray(grad, dtype=np.float64)
    return replace(state, params=state.params - state.lr * velocity, velocity=velocity,
                   step=state.step + 1)


def plateau_reductions(losses, patience: int = 20, threshold: float = 1e-4) -> list[int]:
    """Epoch indices at which a reduce-on-plateau rule fires.

    An epoch improves if its loss is below the best so far minus
    ``threshold``. After ``patience`` consecutive non-improving epochs the
    rule fires and the counter restarts.
    """
    best, wait, fired = np.inf, 0, []
    for i, loss in enumerate(losses):
        if loss < best - threshold:
            best, wait = loss, 0
        else:
            wait += 1
            if wait >= patience:
                fired.append(i)
                wait = 0
    return fired


def lr_schedule(val_losses, lr: float, factor: float = 0.5, patience: int = 20,
                threshold: float = 1e-4) -> float:
    """Learning rate to use after the latest recorded validation loss.

    Call once per epoch with the full loss history; the rate is multiplied
    by ``factor`` when the plateau rule fires on the latest epoch.
    """
    losses = list(val_losses)
    if losses and plateau_reductions(losses, patience, threshold)[-1:] == [len(losses) - 1]:
        return lr * factor
    return lr

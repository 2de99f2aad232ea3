"""Minibatch training loop shared by the CLI and the benchmarks.

Every source of randomness is keyed by ``(seed, purpose, counter)`` so a run
resumed from a checkpoint replays the same shuffles and posterior draws.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import optim
from .bayes import DropoutPredictor, PointPredictor, PosteriorPredictor, counter_uniform, predictive_sets, summarize_array
from .config import RunConfig
from .metrics import confusion, multiclass_metrics
from .model import BilinearShape, NetworkShape, TablShape, batch_forward_backward, init_params

logger = logging.getLogger(__name__)

SHUFFLE_TAG, SAMPLE_TAG, DROPOUT_TAG, INIT_TAG, EVAL_TAG = 1, 2, 3, 4, 5


class NumericalError(RuntimeError):
    def __init__(self, msg, epoch=None, batch=None, info=None):
        super().__init__(msg)
        self.epoch, self.batch, self.info = epoch, batch, info or {}


def network_shape(cfg: RunConfig) -> NetworkShape:
    D, T = len(cfg.feature_dims), cfg.window
    hidden = []
    for d_out, t_out in cfg.hidden_layers:
        hidden.append(BilinearShape(D, T, d_out, t_out, "relu"))
        D, T = d_out, t_out
    head = TablShape(D, T, cfg.head_out[0], cfg.head_out[1], cfg.head_activation)
    return NetworkShape(head, tuple(hidden))


def _rng(seed, tag, *counters) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, tag, *counters]))


def eval_seed(cfg: RunConfig) -> int:
    return int(np.random.SeedSequence([cfg.seed, EVAL_TAG]).generate_state(1, np.uint64)[0])


def init_state(cfg: RunConfig, net: NetworkShape, n_train: int):
    """Fresh optimizer state for ``cfg.optimizer``."""
    if cfg.optimizer == "vogn":
        return optim.vogn_init(net.n_params, n_train, cfg.vogn_prior_precision, cfg.lr,
                               cfg.vogn_momentum, cfg.vogn_h_decay)
    theta = init_params(net, _rng(cfg.seed, INIT_TAG))
    if cfg.optimizer == "sgd":
        return optim.sgd_init(theta, cfg.lr, cfg.sgd_momentum)
    return optim.adam_init(theta, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)


def point_params(state) -> np.ndarray:
    return state.mu if isinstance(state, optim.VariationalState) else state.params


def make_predictor(cfg: RunConfig, net: NetworkShape, state):
    if cfg.optimizer == "vogn":
        return PosteriorPredictor(net, state)
    if cfg.optimizer == "mcd":
        return DropoutPredictor(net, state.params, cfg.dropout)
    return PointPredictor(net, state.params)


def is_stochastic(cfg: RunConfig) -> bool:
    return cfg.optimizer in ("vogn", "mcd")


@dataclass
class SplitScores:
    loss: float
    accuracy: float
    macro_f1: float


def score_split(cfg, net, state, X, y, n_draws=None) -> SplitScores:
    """Predictive NLL, accuracy and macro f1 using ``n_draws`` stochastic passes."""
    n_draws = n_draws or (cfg.ns_val if is_stochastic(cfg) else 1)
    probs = predictive_sets(make_predictor(cfg, net, state), X, n_draws, eval_seed(cfg))
    mean = probs.mean(axis=1)
    loss = float(-np.mean(np.log(np.maximum(mean[np.arange(len(y)), y], 1e-300))))
    rep = multiclass_metrics(confusion(y, mean.argmax(axis=1), net.n_classes))
    return SplitScores(loss, rep.accuracy, rep.macro_f1)


def _step(cfg, net, state, X, y, idx):
    """One optimizer update on the minibatch ``idx``; returns ``(state, loss)``."""
    xb, yb = X[idx], y[idx]
    kind = cfg.optimizer
    if kind == "vogn":
        if state.step < cfg.vogn_warmup_steps:
            loss, _, g = batch_forward_backward(xb, state.mu, net, yb)
            return optim.vogn_warmup_step(state, g), loss
        blocks, losses = [], []
        for k in range(cfg.vogn_train_samples):
            theta = optim.vogn_sample(state, _rng(cfg.seed, SAMPLE_TAG, state.step, k))
            loss, G, _ = batch_forward_backward(xb, theta, net, yb)
            blocks.append(G)
            losses.append(loss)
        return optim.vogn_step(state, np.concatenate(blocks)), float(np.mean(losses))
    mask = None
    if kind == "mcd" and cfg.dropout > 0:
        u = counter_uniform(cfg.seed ^ DROPOUT_TAG, state.step, idx, int(np.prod(X.shape[1:])))
        mask = (u >= cfg.dropout).reshape(xb.shape) / (1.0 - cfg.dropout)
    loss, _, g = batch_forward_backward(xb, state.params, net, yb, input_mask=mask)
    if kind == "sgd":
        return optim.sgd_step(state, g), loss
    return optim.adam_step(state, g), loss


@dataclass
class TrainResult:
    state: object
    epoch: int
    log: list = field(default_factory=list)  # dict rows for the learning curve
    val_losses: list = field(default_factory=list)
    best_f1: float = -np.inf
    best_epoch: int = 0


def fit(cfg: RunConfig, net: NetworkShape, train, validation=None, *, state=None,
        start_epoch: int = 0, history=None, on_epoch=None) -> TrainResult:
    """Train for epochs ``start_epoch+1 .. cfg.epochs``.

    ``train`` and ``validation`` are ``(X, y)`` pairs. ``on_epoch(result)``
    runs after each epoch's scores are logged (used for checkpointing).
    Raises :class:`NumericalError` on a non-finite minibatch loss.
    """
    X, y = train
    n = len(X)
    if state is None:
        state = init_state(cfg, net, n)
    result = history or TrainResult(state, start_epoch)
    result.state = state
    for epoch in range(start_epoch + 1, cfg.epochs + 1):
        perm = _rng(cfg.seed, SHUFFLE_TAG, epoch).permutation(n)
        for b, i in enumerate(range(0, n, cfg.batch_size)):
            state, loss = _step(cfg, net, state, X, y, perm[i:i + cfg.batch_size])
            if not np.isfinite(loss) or not np.all(np.isfinite(point_params(state))):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b}", epoch, b,
                                     {"loss": loss, "batch_indices": perm[i:i + cfg.batch_size].tolist()})
        result.state, result.epoch = state, epoch
        tr = score_split(cfg, net, state, X, y)
        result.log.append({"epoch": epoch, "split": "train", **asdict(tr)})
        if validation is not None and len(validation[0]):
            va = score_split(cfg, net, state, *validation)
            result.log.append({"epoch": epoch, "split": "validation", **asdict(va)})
            result.val_losses.append(va.loss)
            if va.macro_f1 > result.best_f1:
                result.best_f1, result.best_epoch = va.macro_f1, epoch
            if cfg.optimizer != "vogn":
                lr = optim.lr_schedule(result.val_losses, state.lr, cfg.lr_factor, cfg.lr_patience,
                                       cfg.lr_threshold)
                if lr != state.lr:
                    logger.info("epoch %d: validation loss plateaued, lr %.3g -> %.3g", epoch, state.lr, lr)
                    state = result.state = replace(state, lr=lr)
        logger.info("epoch %d: train loss %.4f acc %.4f", epoch, tr.loss, tr.accuracy)
        if on_epoch is not None:
            on_epoch(result)
    return result


def state_to_dict(state) -> dict:
    d = {}
    for k, v in asdict(state).items():
        d[k] = v.tolist() if isinstance(v, np.ndarray) else v
    return d


def state_from_dict(kind: str, d: dict):
    cls = optim.VariationalState if kind == "vogn" else optim.SgdState if kind == "sgd" else optim.AdamState
    arrays = {"mu", "s", "grad_avg", "params", "m", "v", "velocity"}
    return cls(**{k: (np.array(v, dtype=np.float64) if k in arrays and v is not None else v)
                  for k, v in d.items()})


def predict_all(cfg, net, state, X, n_draws, input_ids=None):
    probs = predictive_sets(make_predictor(cfg, net, state), X, n_draws, eval_seed(cfg), input_ids)
    return probs, summarize_array(probs)

"""Run configuration: a flat JSON document validated before any work starts."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from .lobdata import DEFAULT_LABEL_MAPPING, HORIZONS, N_FEATURES, ConfigError, check_label_mapping

OPTIMIZERS = ("vogn", "adam", "sgd", "mcd")

# keys that may change between a run and its resumption
_RESUMABLE = {"epochs", "data_dir", "checkpoint_every"}


@dataclass
class RunConfig:
    data_dir: str | None = None
    orientation: str = "rows"
    feature_dims: list = field(default_factory=lambda: list(range(40)))
    window: int = 10
    horizon: int = 10
    train_frac: float = 0.75
    val_frac: float = 0.15
    test_days: int = 3
    zscore: bool = False
    label_mapping: dict = field(default_factory=lambda: {str(k): v for k, v in DEFAULT_LABEL_MAPPING.items()})
    class_names: list = field(default_factory=lambda: ["stationary", "up", "down"])

    head_out: list = field(default_factory=lambda: [3, 1])
    head_activation: str = "identity"
    hidden_layers: list = field(default_factory=list)  # [[D_out, T_out], ...] relu bilinear layers

    optimizer: str = "vogn"
    lr: float = 0.01
    batch_size: int = 256
    epochs: int = 1000
    sgd_momentum: float = 0.99
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    vogn_momentum: float = 0.999
    vogn_h_decay: float = 0.85
    vogn_prior_precision: float = 1.0
    vogn_train_samples: int = 1
    vogn_warmup_steps: int = 0
    dropout: float = 0.1
    lr_factor: float = 0.5
    lr_patience: int = 20
    lr_threshold: float = 1e-4
    ns_val: int = 10
    ns_test: int = 50
    checkpoint_every: int = 10
    seed: int = 0

    def validate(self) -> "RunConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.orientation in ("rows", "columns"), "orientation must be 'rows' or 'columns'")
        need(len(self.feature_dims) > 0 and all(isinstance(d, int) and 0 <= d < N_FEATURES
                                                for d in self.feature_dims),
             f"feature_dims must be non-empty indices in [0, {N_FEATURES})")
        need(isinstance(self.window, int) and self.window >= 1, "window must be a positive integer")
        need(self.horizon in HORIZONS, f"horizon must be one of {HORIZONS}")
        need(0 <= self.train_frac and 0 <= self.val_frac and self.train_frac + self.val_frac <= 1,
             "train_frac and val_frac must be non-negative with sum <= 1")
        need(isinstance(self.test_days, int) and self.test_days >= 0, "test_days must be >= 0")
        check_label_mapping(self.label_mapping)
        need(len(self.class_names) == 3, "class_names must list three names")
        need(len(self.head_out) == 2 and min(self.head_out) >= 1, "head_out must be [D_out, T_out]")
        need(self.head_activation in ("identity", "relu"), "head_activation must be identity or relu")
        need(all(len(h) == 2 and min(h) >= 1 for h in self.hidden_layers),
             "hidden_layers entries must be [D_out, T_out]")
        need(self.optimizer in OPTIMIZERS, f"optimizer must be one of {OPTIMIZERS}")
        need(self.lr > 0, "lr must be positive")
        need(isinstance(self.batch_size, int) and self.batch_size >= 1, "batch_size must be >= 1")
        need(isinstance(self.epochs, int) and self.epochs >= 0, "epochs must be >= 0")
        need(0 <= self.sgd_momentum < 1, "sgd_momentum must lie in [0, 1)")
        need(0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1, "ADAM betas must lie in [0, 1)")
        need(0 <= self.vogn_momentum < 1, "vogn_momentum must lie in [0, 1)")
        need(0 <= self.vogn_h_decay <= 1, "vogn_h_decay must lie in [0, 1]")
        need(self.vogn_prior_precision > 0, "vogn_prior_precision must be positive")
        need(self.vogn_train_samples >= 1, "vogn_train_samples must be >= 1")
        need(self.vogn_warmup_steps >= 0, "vogn_warmup_steps must be >= 0")
        need(0 <= self.dropout < 1, "dropout must lie in [0, 1)")
        need(0 < self.lr_factor <= 1 and self.lr_patience >= 1, "invalid plateau schedule")
        need(self.ns_val >= 1 and self.ns_test >= 1, "ns_val and ns_test must be >= 1")
        need(self.checkpoint_every >= 1, "checkpoint_every must be >= 1")
        need(isinstance(self.seed, int) and self.seed >= 0, "seed must be a non-negative integer")
        return self

    @property
    def mapping(self) -> dict:
        return check_label_mapping(self.label_mapping)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in _RESUMABLE}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict, require_data: bool = True) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        if require_data and not d.get("data_dir"):
            raise ConfigError("data_dir is required")
        return cls(**d).validate()

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

"""Bayesian temporal attention bilinear networks for limit-order-book classification."""

from .config import RunConfig
from .model import NetworkShape, TablParams, TablShape, batch_forward_backward, tabl_forward
from .optim import VariationalState, adam_step, sgd_step, vogn_init, vogn_sample, vogn_step

__all__ = ["RunConfig", "NetworkShape", "TablParams", "TablShape", "VariationalState", "adam_step",
           "batch_forward_backward", "sgd_step", "tabl_forward", "vogn_init", "vogn_sample", "vogn_step"]
__version__ = "0.1.0"

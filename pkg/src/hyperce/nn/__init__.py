"""Small numpy autodiff engine with the layers HyperCEUNet uses."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, grad_check
from .ops import (add, channel_dropout, concat_channels, conv2d, conv_transpose2d,
                  fully_connected, global_avg_pool, linear, maxpool2, mse_loss, relu,
                  reshape, scale_channels, sigmoid, split_last)
from .optim import Adam, AdamState, adam_step
from .tensor import DEFAULT_DTYPE, Tensor, as_tensor, grad_enabled, no_grad, parameter

__all__ = [
    "Adam", "AdamState", "CheckpointError", "DEFAULT_DTYPE", "GradCheckReport", "Tensor",
    "adam_step", "add", "as_tensor", "channel_dropout", "concat_channels", "conv2d",
    "conv_transpose2d", "fully_connected", "global_avg_pool", "grad_check", "grad_enabled",
    "linear", "load_checkpoint", "maxpool2", "mse_loss", "no_grad", "parameter", "relu",
    "reshape", "save_checkpoint", "scale_channels", "sigmoid", "split_last",
]

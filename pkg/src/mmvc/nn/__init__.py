"""Minimal numpy neural substrate: layers, Adam, gradient checking, checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import gradient_check, numeric_gradient, relative_error
from .layers import (
    BatchNorm,
    batch_norm_backward,
    batch_norm_forward,
    bce_loss,
    conv1d_backward,
    conv1d_forward,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    kaiming,
    max_over_time_backward,
    max_over_time_forward,
    relu_backward,
    relu_forward,
    sigmoid_backward,
    sigmoid_forward,
    softmax_backward,
    softmax_forward,
    xavier,
)
from .optim import Adam, optimizer_step

__all__ = [
    "Adam",
    "BatchNorm",
    "batch_norm_backward",
    "batch_norm_forward",
    "bce_loss",
    "conv1d_backward",
    "conv1d_forward",
    "dense_backward",
    "dense_forward",
    "dropout_backward",
    "dropout_forward",
    "gradient_check",
    "kaiming",
    "load_checkpoint",
    "max_over_time_backward",
    "max_over_time_forward",
    "numeric_gradient",
    "optimizer_step",
    "relative_error",
    "relu_backward",
    "relu_forward",
    "save_checkpoint",
    "sigmoid_backward",
    "sigmoid_forward",
    "softmax_backward",
    "softmax_forward",
    "xavier",
]

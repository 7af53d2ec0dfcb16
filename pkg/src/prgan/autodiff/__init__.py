"""Minimal reverse-mode autodiff over numpy arrays."""

from .checkpoint import CheckpointError, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from .gradcheck import gradcheck, numerical_gradient, relative_error
from .node import Node, as_node, as_value, backward, parameter
from .ops import (
    EPS_LOG,
    BatchNormState,
    add,
    batchnorm,
    bce_terms,
    concat,
    conv,
    conv2d,
    conv3d,
    conv_transpose,
    fully_connected,
    leaky_relu,
    mean_all,
    mse,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    sub,
    sum_all,
    transposed_conv2d,
    transposed_conv3d,
)
from .optim import Adam, adam_step

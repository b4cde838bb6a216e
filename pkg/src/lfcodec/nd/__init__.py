"""Minimal dense-tensor engine with reverse-mode gradients."""

from lfcodec.nd.conv import ConvSpec, conv2d, deconv2d, same_padding
from lfcodec.nd.layers import GDN, ChannelAttention, Conv2d, Deconv2d, Module, channel_attention, gdn
from lfcodec.nd.tensor import (
    Tensor,
    absolute,
    add,
    clamp_min,
    concat,
    gelu,
    is_grad_enabled,
    log,
    matmul,
    mean,
    no_grad,
    normal_cdf,
    parameter,
    relu,
    sigmoid,
    softplus,
    square,
    tanh,
    upsample_nearest,
)

__all__ = [
    "ChannelAttention", "Conv2d", "ConvSpec", "Deconv2d", "GDN", "Module", "Tensor",
    "absolute", "add", "channel_attention", "clamp_min", "concat", "conv2d", "deconv2d",
    "gdn", "gelu", "is_grad_enabled", "log", "matmul", "mean", "no_grad", "normal_cdf",
    "parameter", "relu", "same_padding", "sigmoid", "softplus", "square", "tanh",
    "upsample_nearest",
]

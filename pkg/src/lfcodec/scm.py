"""Asymmetric strip convolution (ASC) layers and the strip convolution module (SCM)."""

from __future__ import annotations

import numpy as np

from lfcodec.errors import ShapeError
from lfcodec.nd import tensor as T
from lfcodec.nd.conv import conv_sum_same
from lfcodec.nd.layers import GDN, Conv2d, Deconv2d, Module

RESAMPLE = ("down2", "up2", "none")
ASC_FUSE_GAIN = 0.1


class ASCLayer(Module):
    """f(x) = C0(C1(x) + C2(x) + C3(x)) + x.

    With side length s the branch kernels are s^2 x 1, 1 x s^2 and s x s, all
    zero same-padded; C0 is 1x1. ``use_strip=False`` drops C1 and C2.
    """

    def __init__(self, channels, side=3, use_strip=True, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.channels = channels
        self.branches = []
        if use_strip:
            self.branches.append(Conv2d(channels, channels, (side * side, 1), rng=rng))
            self.branches.append(Conv2d(channels, channels, (1, side * side), rng=rng))
        self.branches.append(Conv2d(channels, channels, (side, side), rng=rng))
        # Small fuse gain keeps a freshly initialised layer close to identity.
        self.fuse = Conv2d(channels, channels, 1, rng=rng, gain=ASC_FUSE_GAIN)

    def forward(self, x):
        return asc_layer(self, x)


def asc_layer(layer: ASCLayer, x):
    x = T.as_tensor(x)
    if x.shape[1] != layer.channels:
        raise ShapeError(f"ASC layer expects {layer.channels} channels, got {x.shape[1]}")
    # The parallel branches share one column matrix; the sum equals running them separately.
    acc = conv_sum_same(x, [b.weight for b in layer.branches], [b.bias for b in layer.branches])
    return layer.fuse(acc) + x


class SCM(Module):
    """GDN(f2(GELU(f1(r)))) + r, where r is the input after the resampling step.

    Down-sampling is a stride-2 3x3 conv, up-sampling a stride-2 transposed
    conv (kernel 4, pad 1); both sit in front of the ASC layers. Decoder-side
    blocks pass ``inverse=True`` to use IGDN.
    """

    def __init__(self, cin, cout, resample="none", inverse=False, use_strip=True, side=3, rng=None):
        if resample not in RESAMPLE:
            raise ValueError(f"resample must be one of {RESAMPLE}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.resample_mode = resample
        if resample == "down2":
            self.resample = Conv2d(cin, cout, 3, stride=2, padding=1, rng=rng)
        elif resample == "up2":
            self.resample = Deconv2d(cin, cout, rng=rng)
        else:
            self.resample = Conv2d(cin, cout, 1, rng=rng) if cin != cout else None
        self.f1 = ASCLayer(cout, side, use_strip, rng)
        self.f2 = ASCLayer(cout, side, use_strip, rng)
        self.norm = GDN(cout, inverse=inverse)

    def forward(self, x):
        return scm_forward(self, x)


def scm_forward(block: SCM, x):
    x = T.as_tensor(x)
    if block.resample_mode == "down2" and (x.shape[2] % 2 or x.shape[3] % 2):
        raise ShapeError(f"down2 needs even spatial extents, got {x.shape[2:]}")
    r = block.resample(x) if block.resample is not None else x
    return block.norm(block.f2(T.gelu(block.f1(r)))) + r

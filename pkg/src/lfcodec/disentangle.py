"""Subspace feature extractors over a MacPI and the feature disentangling module (FDM).

Geometry on a MacPI of extent AH x AW (``macpi[h*A+u, w*A+v]``):

========  =========================================  ===========
kind      convolution(s)                              output
========  =========================================  ===========
SFE       3x3, dilation A, same padding               AH x AW
AFE       AxA, stride A                               H x W
EFE_A     1xA^2, stride (1, A)                        AH x W
EFE_B     A^2x1, stride (A, 1)                        H x AW
UW_EFE    1xA stride (1, A), then Ax1 stride 1        AH x W
VH_EFE    Ax1 stride (A, 1), then 1xA stride 1        H x AW
========  =========================================  ===========

Every extractor is linear; each output site depends only on LF samples that
share the coordinates listed in ``HELD_COORDS`` with that site.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lfcodec.errors import ShapeError
from lfcodec.nd import tensor as T
from lfcodec.nd.layers import ChannelAttention, Conv2d, Module

KINDS = ("SFE", "AFE", "EFE_A", "EFE_B", "UW_EFE", "VH_EFE")

# Concatenation order: [SFE | AFE | EFE_A, UW_EFE | EFE_B, VH_EFE]
CONCAT_ORDER = ("SFE", "AFE", "EFE_A", "UW_EFE", "EFE_B", "VH_EFE")

# LF coordinates an output site shares with every sample in its support.
HELD_COORDS = {
    "SFE": ("u", "v"),
    "AFE": ("h", "w"),
    "EFE_A": ("u", "h"),
    "EFE_B": ("v", "w"),
    "UW_EFE": ("w",),
    "VH_EFE": ("h",),
}

# Nearest-replication factors (rows, cols) that bring each output to AH x AW.
_ALIGN = {
    "SFE": lambda a: (1, 1),
    "AFE": lambda a: (a, a),
    "EFE_A": lambda a: (1, a),
    "EFE_B": lambda a: (a, 1),
    "UW_EFE": lambda a: (1, a),
    "VH_EFE": lambda a: (a, 1),
}


@dataclass(frozen=True)
class ExtractorSpec:
    kind: str
    A: int
    in_channels: int = 1
    out_channels: int = 8

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown extractor kind {self.kind!r}")
        if self.A < 2:
            raise ShapeError("extractors need A >= 2")

    def layer_geometry(self):
        """List of (kernel, stride, dilation, padding) per conv layer."""
        a = self.A
        epi_pad = a * (a - 1) // 2
        lo, hi = (a - 1) // 2, a - 1 - (a - 1) // 2
        return {
            "SFE": [((3, 3), (1, 1), (a, a), ((a, a), (a, a)))],
            "AFE": [((a, a), (a, a), (1, 1), ((0, 0), (0, 0)))],
            "EFE_A": [((1, a * a), (1, a), (1, 1), ((0, 0), (epi_pad, epi_pad)))],
            "EFE_B": [((a * a, 1), (a, 1), (1, 1), ((epi_pad, epi_pad), (0, 0)))],
            "UW_EFE": [
                ((1, a), (1, a), (1, 1), ((0, 0), (0, 0))),
                ((a, 1), (1, 1), (1, 1), ((lo, hi), (0, 0))),
            ],
            "VH_EFE": [
                ((a, 1), (a, 1), (1, 1), ((0, 0), (0, 0))),
                ((1, a), (1, 1), (1, 1), ((0, 0), (lo, hi))),
            ],
        }[self.kind]

    def output_extent(self, H, W):
        a = self.A
        return {
            "SFE": (a * H, a * W),
            "AFE": (H, W),
            "EFE_A": (a * H, W),
            "EFE_B": (H, a * W),
            "UW_EFE": (a * H, W),
            "VH_EFE": (H, a * W),
        }[self.kind]


class Extractor(Module):
    def __init__(self, spec: ExtractorSpec, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.spec = spec
        self.layers = []
        cin = spec.in_channels
        for kernel, stride, dilation, padding in spec.layer_geometry():
            self.layers.append(Conv2d(cin, spec.out_channels, kernel, stride, dilation, padding, rng=rng))
            cin = spec.out_channels

    def forward(self, m):
        return run_extractor(self, m)


def run_extractor(ext: Extractor, m):
    a = ext.spec.A
    m = T.as_tensor(m)
    rows, cols = m.shape[-2:]
    if rows % a or cols % a:
        raise ShapeError(f"MacPI extent {rows}x{cols} not divisible by A={a}")
    out = m
    for layer in ext.layers:
        out = layer(out)
    return out


def align_features(features: dict, A: int) -> dict:
    """Nearest-replicate every extractor map back to the AH x AW grid."""
    return {k: T.upsample_nearest(v, _ALIGN[k](A)) for k, v in features.items()}


class FDM(Module):
    """Extract, align, group-concatenate, attend, then fuse with a 1x1 conv plus a projected residual."""

    def __init__(self, A, in_channels, out_channels=48, ext_channels=8, use_uwvh=True, reduction=4, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.A = A
        self.kinds = tuple(k for k in CONCAT_ORDER if use_uwvh or k not in ("UW_EFE", "VH_EFE"))
        self.extractors = {k: Extractor(ExtractorSpec(k, A, in_channels, ext_channels), rng) for k in self.kinds}
        concat_ch = ext_channels * len(self.kinds)
        self.attention = ChannelAttention(concat_ch, reduction, rng)
        self.fuse = Conv2d(concat_ch, out_channels, 1, rng=rng)
        self.residual = Conv2d(in_channels, out_channels, 1, rng=rng)

    def extract(self, m) -> dict:
        return {k: self.extractors[k](m) for k in self.kinds}

    def concat(self, m):
        aligned = align_features(self.extract(m), self.A)
        return T.concat([aligned[k] for k in self.kinds], axis=1)

    def forward(self, m):
        return fdm_fuse(self, m)


def fdm_fuse(fdm: FDM, m):
    m = T.as_tensor(m)
    return fdm.fuse(fdm.attention(fdm.concat(m))) + fdm.residual(m)


class PlainStem(Module):
    """Stand-in for the FDM when it is ablated: a single 3x3 conv of the MacPI."""

    def __init__(self, in_channels, out_channels, rng=None):
        self.conv = Conv2d(in_channels, out_channels, 3, rng=rng)

    def forward(self, m):
        return self.conv(m)


def input_support(module, A, H, W, site, channels=1):
    """LF coordinates (u, v, h, w) whose MacPI samples reach output ``site`` = (channel, row, col).

    Found by back-propagating a one-hot output gradient through ``module`` on a
    random MacPI; a coordinate is in the support iff its gradient is non-zero.
    """
    x = T.Tensor(np.random.default_rng(0).normal(size=(1, channels, A * H, A * W)), requires_grad=True)
    out = module(x)
    g = np.zeros(out.shape)
    g[(0,) + tuple(site)] = 1.0
    out.backward(g)
    rows, cols = np.nonzero(np.any(x.grad[0] != 0, axis=0))
    return {(r % A, c % A, r // A, c // A) for r, c in zip(rows, cols)}


def subspace_pure(ext: Extractor, H, W, n_sites=6, rng=None):
    """True iff every probed output site only reads samples sharing the kind's held coordinates."""
    rng = np.random.default_rng(0) if rng is None else rng
    spec = ext.spec
    rows, cols = spec.output_extent(H, W)
    axis = {"u": 0, "v": 1, "h": 2, "w": 3}
    held = [axis[k] for k in HELD_COORDS[spec.kind]]
    for _ in range(n_sites):
        site = (int(rng.integers(spec.out_channels)), int(rng.integers(rows)), int(rng.integers(cols)))
        support = input_support(ext, spec.A, H, W, site, spec.in_channels)
        if not support or len({tuple(s[i] for i in held) for s in support}) != 1:
            return False
    return True

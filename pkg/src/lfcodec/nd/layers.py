"""Parameter containers and the normalisation / attention operators built on them."""

from __future__ import annotations

import numpy as np
from scipy import stats

from lfcodec.errors import ParameterError, ShapeError
from lfcodec.nd import tensor as T
from lfcodec.nd.conv import ConvSpec, conv2d, deconv2d, same_padding
from lfcodec.nd.tensor import Tensor, parameter

GDN_BETA_MIN = 1e-6


class Module:
    """Attribute-walking parameter container (a very small ``nn.Module``)."""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            yield from _walk(val, prefix + key)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state, strict=True):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if strict and (missing or unexpected):
            raise ParameterError(f"state mismatch; missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            if name in state:
                arr = np.asarray(state[name], dtype=np.float64)
                if arr.shape != p.shape:
                    raise ParameterError(f"{name}: shape {arr.shape} != {p.shape}")
                p.data = arr.copy()


def _walk(val, name):
    if isinstance(val, Tensor):
        if val.requires_grad:
            yield name, val
    elif isinstance(val, Module):
        yield from val.named_parameters(name + ".")
    elif isinstance(val, (list, tuple)):
        for i, v in enumerate(val):
            yield from _walk(v, f"{name}.{i}")
    elif isinstance(val, dict):
        for k, v in val.items():
            yield from _walk(v, f"{name}.{k}")


def trunc_normal(rng, shape, fan_in):
    """Truncated (+-2 sd) normal with sd = 1/sqrt(fan_in)."""
    sd = 1.0 / np.sqrt(max(fan_in, 1))
    return stats.truncnorm.rvs(-2.0, 2.0, scale=sd, size=shape, random_state=rng)


class Conv2d(Module):
    def __init__(self, cin, cout, kernel=3, stride=1, dilation=1, padding="same", pad_mode="zero",
                 bias=True, rng=None, gain=1.0):
        kh, kw = (kernel, kernel) if np.isscalar(kernel) else kernel
        if padding == "same":
            padding = same_padding((kh, kw), dilation)
        self.spec = ConvSpec(cin, cout, (kh, kw), stride, dilation, padding, pad_mode)
        rng = np.random.default_rng(0) if rng is None else rng
        self.weight = parameter(gain * trunc_normal(rng, (cout, cin, kh, kw), cin * kh * kw))
        self.bias = parameter(np.zeros(cout)) if bias else None

    def forward(self, x):
        s = self.spec
        return conv2d(x, self.weight, self.bias, s.stride, s.dilation, s.padding, s.pad_mode)


class Deconv2d(Module):
    """Transposed conv; default kernel 4 / stride 2 / pad 1 doubles the extent."""

    def __init__(self, cin, cout, kernel=4, stride=2, padding=1, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.stride, self.padding = stride, padding
        self.weight = parameter(trunc_normal(rng, (cin, cout, kernel, kernel), cin * kernel * kernel / stride**2))
        self.bias = parameter(np.zeros(cout))

    def forward(self, x):
        return deconv2d(x, self.weight, self.bias, self.stride, self.padding)


def gdn(x, beta, gamma, inverse=False):
    """y_c = x_c / sqrt(beta_c + sum_j gamma_cj x_j^2) at every site; ``inverse`` multiplies."""
    x, beta, gamma = T.as_tensor(x), T.as_tensor(beta), T.as_tensor(gamma)
    c = x.shape[1]
    if beta.shape != (c,) or gamma.shape != (c, c):
        raise ShapeError(f"GDN parameters {beta.shape}/{gamma.shape} do not match {c} channels")
    if not (np.all(np.isfinite(beta.data)) and np.all(np.isfinite(gamma.data))):
        raise ParameterError("non-finite GDN parameter")
    norm = T.sqrt(conv2d(T.square(x), T.reshape(gamma, (c, c, 1, 1)), beta))
    return x * norm if inverse else x / norm


class GDN(Module):
    """GDN / IGDN with squared-offset parameters: beta = p_b^2 + beta_min, gamma = p_g^2.

    Off-diagonal gamma parameters start at 1e-3 (gamma ~ 1e-6) rather than
    exactly zero, since a squared parameterisation has no gradient at zero.
    """

    def __init__(self, channels, inverse=False, beta_init=1.0, gamma_init=0.1):
        self.inverse = inverse
        self.beta_p = parameter(np.full(channels, np.sqrt(beta_init - GDN_BETA_MIN)))
        g = np.full((channels, channels), 1e-3)
        np.fill_diagonal(g, np.sqrt(gamma_init))
        self.gamma_p = parameter(g)

    def effective(self):
        beta = T.square(self.beta_p) + GDN_BETA_MIN
        gamma = T.square(self.gamma_p)
        return beta, gamma

    def forward(self, x):
        beta, gamma = self.effective()
        return gdn(x, beta, gamma, self.inverse)


def channel_attention(x, w1, w2):
    """Squeeze-excitation: s = sigmoid(W2 relu(W1 avgpool(x))), y = s * x."""
    x = T.as_tensor(x)
    pooled = T.mean(x, axis=(2, 3), keepdims=True)
    s = T.sigmoid(conv2d(T.relu(conv2d(pooled, w1)), w2))
    return x * s


class ChannelAttention(Module):
    def __init__(self, channels, reduction=4, rng=None):
        if channels % reduction:
            raise ShapeError(f"reduction ratio {reduction} does not divide {channels} channels")
        rng = np.random.default_rng(0) if rng is None else rng
        hidden = channels // reduction
        self.w1 = parameter(trunc_normal(rng, (hidden, channels, 1, 1), channels))
        self.w2 = parameter(trunc_normal(rng, (channels, hidden, 1, 1), hidden))

    def forward(self, x):
        return channel_attention(x, self.w1, self.w2)

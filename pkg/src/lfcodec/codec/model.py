"""The compression network: FDM -> g_a -> quantise -> entropy model, hyper path, and g_s."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from lfcodec.disentangle import FDM, PlainStem
from lfcodec.entropy.context import SpaceChannelContext
from lfcodec.entropy.models import FactorizedPrior, gaussian_likelihood, round_half_away
from lfcodec.errors import ConfigError, ShapeError
from lfcodec.nd import tensor as T
from lfcodec.nd.layers import Conv2d, Module
from lfcodec.scm import SCM

LAMBDA_LADDER = (0.00015, 0.0002, 0.0006, 0.001, 0.003)

ABLATIONS = ("no_strip_conv", "no_fdm", "dual_fdm", "no_uwvh", "hyper_only_entropy")
_FLAG_BITS = {name: 1 << i for i, name in enumerate(ABLATIONS)}

# Total spatial down-sampling of y (4 SCM stages) and z (2 more).
LATENT_STRIDE = 16
HYPER_STRIDE = 64


@dataclass(frozen=True)
class CodecConfig:
    A: int = 5
    channels: int = 3
    C_fdm: int = 48
    N: int = 48
    M: int = 64
    hyper: int = 16
    ext_channels: int = 8
    groups: int = 4
    lambda_index: int = 0
    lmbda: float | None = None
    Q: float = 1.0
    side: int = 3
    seed: int = 0
    no_strip_conv: bool = False
    no_fdm: bool = False
    dual_fdm: bool = False
    no_uwvh: bool = False
    hyper_only_entropy: bool = False

    def __post_init__(self):
        if self.A < 2:
            raise ConfigError("A must be >= 2")
        if self.M % self.groups:
            raise ConfigError(f"{self.groups} context groups do not divide M={self.M}")
        if self.Q <= 0:
            raise ConfigError("quantisation step must be positive")
        if self.lmbda is None and not 0 <= self.lambda_index < len(LAMBDA_LADDER):
            raise ConfigError(f"lambda index {self.lambda_index} outside the ladder")
        if self.lmbda is not None and self.lmbda < 0:
            raise ConfigError("lambda must be non-negative")
        n_ext = 4 if self.no_uwvh else 6
        if not self.no_fdm and (n_ext * self.ext_channels) % 4:
            raise ConfigError("attention reduction ratio 4 must divide the concatenated channels")

    @property
    def lam(self) -> float:
        return float(self.lmbda) if self.lmbda is not None else LAMBDA_LADDER[self.lambda_index]

    @property
    def flag_bits(self) -> int:
        return sum(bit for name, bit in _FLAG_BITS.items() if getattr(self, name))

    @property
    def ablations(self):
        return [name for name in ABLATIONS if getattr(self, name)]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    @classmethod
    def toy(cls, **overrides):
        """Reduced channel counts for CPU-scale training and tests."""
        base = dict(A=2, channels=1, C_fdm=16, N=16, M=16, hyper=8, ext_channels=4)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def tiny(cls, **overrides):
        """Smallest useful network, for finite-difference checks."""
        base = dict(A=2, channels=1, C_fdm=4, N=4, M=8, hyper=4, ext_channels=2)
        base.update(overrides)
        return cls(**base)

    def with_ablations(self, names):
        unknown = set(names) - set(ABLATIONS)
        if unknown:
            raise ConfigError(f"unknown ablation(s): {sorted(unknown)}")
        return CodecConfig.from_dict({**self.to_dict(), **{n: True for n in names}})


def flags_from_bits(bits: int) -> list:
    return [name for name, bit in _FLAG_BITS.items() if bits & bit]


def quantize(t, step=1.0, mode="round", rng=None, noise=None):
    """``round``: round-half-away(t/step)*step (no gradient). ``noise``: t + step*u, u ~ U[-1/2, 1/2)."""
    t = T.as_tensor(t)
    if step <= 0:
        raise ConfigError("quantisation step must be positive")
    if mode == "round":
        return T.Tensor(round_half_away(t.data / step) * step)
    if mode == "noise":
        if noise is None:
            rng = np.random.default_rng() if rng is None else rng
            noise = rng.random(t.shape) - 0.5
        return t + step * np.asarray(noise)
    raise ValueError(f"unknown quantisation mode {mode!r}")


class ResBlock(Module):
    """Residual bottleneck: x + 1x1(relu(3x3(relu(1x1(x)))))."""

    def __init__(self, channels, rng):
        mid = max(channels // 2, 1)
        self.a = Conv2d(channels, mid, 1, rng=rng)
        self.b = Conv2d(mid, mid, 3, rng=rng)
        self.c = Conv2d(mid, channels, 1, rng=rng, gain=0.1)

    def forward(self, x):
        return x + self.c(T.relu(self.b(T.relu(self.a(x)))))


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


class LFCodecModel(Module):
    def __init__(self, cfg: CodecConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        strip = not cfg.no_strip_conv
        n = cfg.N
        if cfg.no_fdm:
            self.stem = PlainStem(cfg.channels, cfg.C_fdm, rng)
        else:
            self.stem = FDM(cfg.A, cfg.channels, cfg.C_fdm, cfg.ext_channels, not cfg.no_uwvh, rng=rng)

        def scm(cin, cout, mode, inverse=False):
            return SCM(cin, cout, mode, inverse=inverse, use_strip=strip, side=cfg.side, rng=rng)

        self.g_a = Sequential(
            scm(cfg.C_fdm, n, "down2"), ResBlock(n, rng),
            scm(n, n, "down2"), ResBlock(n, rng),
            scm(n, n, "down2"), ResBlock(n, rng),
            scm(n, n, "down2"),
            Conv2d(n, cfg.M, 3, rng=rng),
        )
        tail = []
        if cfg.dual_fdm:
            tail.append(FDM(cfg.A, n, n, cfg.ext_channels, not cfg.no_uwvh, rng=rng))
        self.g_s = Sequential(
            Conv2d(cfg.M, n, 3, rng=rng),
            scm(n, n, "up2", True), ResBlock(n, rng),
            scm(n, n, "up2", True), ResBlock(n, rng),
            scm(n, n, "up2", True), ResBlock(n, rng),
            scm(n, n, "up2", True),
            *tail,
            Conv2d(n, cfg.channels, 3, rng=rng, gain=0.1),
        )
        self.h_a = Sequential(scm(cfg.M, n, "down2"), scm(n, cfg.hyper, "down2"))
        self.h_s = Sequential(scm(cfg.hyper, n, "up2", True), scm(n, cfg.M, "up2", True))
        self.prior = FactorizedPrior(cfg.hyper, rng=rng)
        self.context = SpaceChannelContext(cfg.M, cfg.M, cfg.groups, cfg.hyper_only_entropy, rng=rng)

    # individual stages --------------------------------------------------
    def check_input(self, x):
        x = T.as_tensor(x)
        if x.ndim != 4 or x.shape[1] != self.cfg.channels:
            raise ShapeError(f"expected [N, {self.cfg.channels}, AH, AW], got {x.shape}")
        rows, cols = x.shape[2:]
        if rows % HYPER_STRIDE or cols % HYPER_STRIDE:
            raise ShapeError(f"MacPI extent {rows}x{cols} must be divisible by {HYPER_STRIDE}; pad first")
        if rows % self.cfg.A or cols % self.cfg.A:
            raise ShapeError(f"MacPI extent {rows}x{cols} not divisible by A={self.cfg.A}")
        return x

    def analysis(self, x):
        return self.g_a(self.stem(self.check_input(x)))

    def synthesis(self, y_hat):
        y_hat = T.as_tensor(y_hat)
        if y_hat.ndim != 4 or y_hat.shape[1] != self.cfg.M:
            raise ShapeError(f"latent must be [N, {self.cfg.M}, h, w], got {y_hat.shape}")
        return self.g_s(y_hat)

    def hyper_analysis(self, y):
        return self.h_a(y)

    def hyper_synthesis(self, z_hat):
        return self.h_s(z_hat)

    # training pass --------------------------------------------------------
    def forward(self, x, rng=None, zero_noise=False):
        """Noise-relaxed pass used for training; returns a dict of intermediate tensors."""
        q = self.cfg.Q
        y = self.analysis(x)
        z = self.hyper_analysis(y)
        if zero_noise:
            z_t, y_t = z, y
        else:
            rng = np.random.default_rng() if rng is None else rng
            z_t = quantize(z, q, "noise", rng)
            y_t = quantize(y, q, "noise", rng)
        hyper = self.hyper_synthesis(z_t)
        mu, sigma = self.context(hyper, y_t)
        return {
            "x_hat": self.synthesis(y_t),
            "y": y,
            "z": z,
            "lik_y": gaussian_likelihood(y_t, mu, sigma, q),
            "lik_z": self.prior.likelihood(z_t, q),
            "mu": mu,
            "sigma": sigma,
        }

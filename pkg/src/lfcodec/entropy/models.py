"""Probability models for the latents and their conversion to range-coder tables."""

from __future__ import annotations

import numpy as np
from scipy import special

from lfcodec.entropy.rangecoder import RangeDecoder, RangeEncoder, pmf_to_cdf
from lfcodec.errors import NumericError
from lfcodec.nd import tensor as T
from lfcodec.nd.layers import Module
from lfcodec.nd.tensor import parameter

SCALE_BOUND = 0.04
LIKELIHOOD_BOUND = 1e-9
TAIL_MASS = 1e-9
# 64 log-spaced coder scales from the scale bound up to 64.
SCALE_TABLE = np.exp(np.linspace(np.log(SCALE_BOUND), np.log(64.0), 64))
# Half-width of the coded window, in quantisation steps, for each table scale.
TAIL_SIGMAS = float(-special.ndtri(TAIL_MASS / 2))
SCALE_WINDOW = np.ceil(TAIL_SIGMAS * SCALE_TABLE).astype(np.int64) + 1
_OVERFLOW_LEN_BITS = 6


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def gaussian_bin_likelihood(q, mu, sigma, step=1.0):
    """P(q) for a N(mu, sigma) variable quantised to bins of width ``step`` centred on q."""
    v = np.abs(np.asarray(q, dtype=np.float64) - mu)
    sigma = np.maximum(sigma, SCALE_BOUND)
    return special.ndtr((0.5 * step - v) / sigma) - special.ndtr((-0.5 * step - v) / sigma)


def gaussian_likelihood(y, mu, sigma, step=1.0):
    """Differentiable bin likelihood, lower-bounded at 1e-9."""
    v = T.absolute(T.sub(y, mu))
    upper = T.normal_cdf(T.div(T.sub(0.5 * step, v), sigma))
    lower = T.normal_cdf(T.div(T.sub(-0.5 * step, v), sigma))
    return T.clamp_min(upper - lower, LIKELIHOOD_BOUND)


def estimate_bits(likelihoods):
    """Total ideal code length, sum of -log2 p, as a differentiable scalar."""
    lik = T.as_tensor(likelihoods)
    if np.any(lik.data <= 0):
        raise NumericError("likelihoods must be strictly positive")
    return T.tsum(T.log(lik)) * (-1.0 / np.log(2.0))


def scale_index(sigma):
    """Index of the smallest table scale >= sigma (clipped to the table)."""
    idx = np.searchsorted(SCALE_TABLE, np.asarray(sigma, dtype=np.float64), side="left")
    return np.clip(idx, 0, len(SCALE_TABLE) - 1)


class FactorizedPrior(Module):
    """Per-channel non-parametric density built from monotone affine/tanh layers.

    The cumulative logit is c(x) = L_K o ... o L_1 (x) where each layer is
    ``softplus(H) @ x + b`` optionally followed by ``x + tanh(a) * tanh(x)``;
    softplus keeps every layer monotone so sigmoid(c) is a valid CDF.
    """

    def __init__(self, channels, filters=(3, 3, 3), init_scale=10.0, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.channels = channels
        dims = (1,) + tuple(filters) + (1,)
        scale = init_scale ** (1.0 / (len(dims) - 1))
        self.matrices, self.biases, self.factors = [], [], []
        for i in range(len(dims) - 1):
            init = np.log(np.expm1(1.0 / scale / dims[i + 1]))
            self.matrices.append(parameter(np.full((channels, dims[i + 1], dims[i]), init)))
            self.biases.append(parameter(rng.uniform(-0.5, 0.5, (channels, dims[i + 1], 1))))
            if i < len(dims) - 2:
                self.factors.append(parameter(np.zeros((channels, dims[i + 1], 1))))

    def logits_cumulative(self, x):
        """``x`` is (C, 1, S); returns the cumulative logit with the same shape."""
        for i, (m, b) in enumerate(zip(self.matrices, self.biases)):
            x = T.matmul(T.softplus(m), x) + b
            if i < len(self.factors):
                x = x + T.tanh(self.factors[i]) * T.tanh(x)
        return x

    def likelihood(self, z, step=1.0):
        """Bin likelihoods for NCHW ``z``."""
        z = T.as_tensor(z)
        n, c, h, w = z.shape
        flat = T.reshape(T.transpose(z, (1, 0, 2, 3)), (c, 1, n * h * w))
        lower = self.logits_cumulative(flat - 0.5 * step)
        upper = self.logits_cumulative(flat + 0.5 * step)
        sign = T.Tensor(-np.sign(lower.data + upper.data))
        lik = T.absolute(T.sigmoid(sign * upper) - T.sigmoid(sign * lower))
        lik = T.clamp_min(lik, LIKELIHOOD_BOUND)
        return T.transpose(T.reshape(lik, (c, n, h, w)), (1, 0, 2, 3))

    def cdf_numpy(self, x):
        """CDF evaluated at (C, S) points without recording a graph."""
        with T.no_grad():
            logits = self.logits_cumulative(T.Tensor(np.asarray(x)[:, None, :])).data[:, 0, :]
        return special.expit(logits)

    def coding_tables(self, step=1.0, max_symbol=256):
        """Per-channel (lo, cdf) covering integer symbols lo..hi plus a final overflow symbol."""
        grid = np.arange(-max_symbol, max_symbol + 1)
        pts = np.broadcast_to((grid + 0.5) * step, (self.channels, grid.size))
        cdf_hi = self.cdf_numpy(pts)
        cdf_lo = self.cdf_numpy(pts - step)
        tables = []
        for c in range(self.channels):
            inside = np.nonzero((cdf_hi[c] > TAIL_MASS / 2) & (cdf_lo[c] < 1.0 - TAIL_MASS / 2))[0]
            if inside.size == 0:
                inside = np.array([max_symbol])
            i0, i1 = inside[0], inside[-1]
            pmf = cdf_hi[c, i0:i1 + 1] - cdf_lo[c, i0:i1 + 1]
            overflow = max(1.0 - pmf.sum(), 0.0)
            tables.append((int(grid[i0]), pmf_to_cdf(np.append(pmf, overflow))))
        return tables


def gaussian_tables(mu, sigma, step=1.0):
    """Per-element (lo, cdf) windows for integer symbols given mean/scale in latent units.

    Symbols are q = y_hat / step. Each window spans round(mu/step) +- K where K
    depends only on the coder scale chosen from ``SCALE_TABLE``; the last table
    entry is the overflow symbol.
    """
    mu = np.asarray(mu, dtype=np.float64).ravel() / step
    sigma = np.asarray(sigma, dtype=np.float64).ravel() / step
    idx = scale_index(sigma)
    centers = round_half_away(mu).astype(np.int64)
    los = np.empty(mu.size, dtype=np.int64)
    cdfs = [None] * mu.size
    for k in np.unique(idx):
        sel = np.nonzero(idx == k)[0]
        half = int(SCALE_WINDOW[k])
        offsets = np.arange(-half, half + 1)
        q = centers[sel, None] + offsets[None, :]
        s = SCALE_TABLE[k]
        pmf = special.ndtr((q + 0.5 - mu[sel, None]) / s) - special.ndtr((q - 0.5 - mu[sel, None]) / s)
        overflow = np.clip(1.0 - pmf.sum(axis=1, keepdims=True), 0.0, None)
        rows = pmf_to_cdf(np.hstack([pmf, overflow]))
        los[sel] = centers[sel] - half
        for j, e in enumerate(sel):
            cdfs[e] = rows[j]
    return los, cdfs


def encode_with_tables(enc: RangeEncoder, symbols, los, cdfs):
    """Code integer ``symbols`` against windowed tables, escaping values outside each window."""
    for q, lo, cdf in zip(np.asarray(symbols, dtype=np.int64).ravel(), los, cdfs):
        n = len(cdf) - 3  # last in-window symbol; n + 1 is the escape
        s = int(q) - int(lo)
        if 0 <= s <= n:
            enc.encode_symbol(s, cdf)
            continue
        enc.encode_symbol(n + 1, cdf)
        below = s < 0
        magnitude = (-s - 1) if below else (s - n - 1)
        enc.encode_bits(int(below), 1)
        _encode_gamma(enc, magnitude)


def decode_with_tables(dec: RangeDecoder, los, cdfs):
    out = np.empty(len(cdfs), dtype=np.int64)
    for i, (lo, cdf) in enumerate(zip(los, cdfs)):
        n = len(cdf) - 3
        s = dec.decode_symbol(cdf)
        if s <= n:
            out[i] = lo + s
            continue
        below = dec.decode_bits(1)
        magnitude = _decode_gamma(dec)
        out[i] = lo - 1 - magnitude if below else lo + n + 1 + magnitude
    return out


def _encode_gamma(enc, m):
    v = m + 1
    nbits = v.bit_length()
    enc.encode_bits(nbits - 1, _OVERFLOW_LEN_BITS)
    enc.encode_bits(v & ((1 << (nbits - 1)) - 1), nbits - 1)


def _decode_gamma(dec):
    nbits = dec.decode_bits(_OVERFLOW_LEN_BITS) + 1
    rest = dec.decode_bits(nbits - 1)
    return ((1 << (nbits - 1)) | rest) - 1

"""Light field <-> bitstream, using a trained model and its checkpoint hash."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from lfcodec.codec import bitstream
from lfcodec.codec.model import HYPER_STRIDE, LAMBDA_LADDER, LATENT_STRIDE, LFCodecModel
from lfcodec.entropy.context import anchor_mask
from lfcodec.entropy.models import (
    LIKELIHOOD_BOUND,
    decode_with_tables,
    encode_with_tables,
    gaussian_bin_likelihood,
    gaussian_tables,
    round_half_away,
)
from lfcodec.entropy.rangecoder import RangeDecoder, RangeEncoder
from lfcodec.errors import ConfigError, DecodeError, IntegrityError, ShapeError
from lfcodec.lf import LightField4D, MacPI, PadRecord, crop_lf, macpi_to_sai, pad_lf, sai_to_macpi
from lfcodec.nd import tensor as T


@dataclass
class StreamReport:
    name: str
    symbols: int
    bytes: int
    estimated_bits: float

    @property
    def bits(self):
        return 8 * self.bytes


@dataclass
class EncodeResult:
    data: bytes
    y_q: np.ndarray
    z_q: np.ndarray
    streams: list
    samples: int
    timings: dict = field(default_factory=dict)

    @property
    def bpp(self):
        return 8 * len(self.data) / self.samples

    @property
    def payload_bits(self):
        return sum(s.bits for s in self.streams)

    @property
    def estimated_bits(self):
        return sum(s.estimated_bits for s in self.streams)

    def report(self):
        """JSON-ready summary; everything except ``timings`` is a pure function of the inputs."""
        return {
            "bytes": len(self.data),
            "samples": self.samples,
            "bpp": self.bpp,
            "header_bits": 8 * bitstream.HEADER_SIZE,
            "payload_bits": self.payload_bits,
            "estimated_bits": self.estimated_bits,
            "payload_bpp": self.payload_bits / self.samples,
            "estimated_bpp": self.estimated_bits / self.samples,
            "streams": [
                {"name": s.name, "symbols": s.symbols, "bits": s.bits, "estimated_bits": s.estimated_bits}
                for s in self.streams
            ],
            "timings": self.timings,
        }


@dataclass
class DecodeResult:
    lf: LightField4D
    y_q: np.ndarray
    z_q: np.ndarray
    header: bitstream.Header


def _normalise(lf: LightField4D):
    lo, hi = lf.value_range
    if not hi > lo:
        raise ShapeError(f"degenerate value range {lf.value_range}")
    return (lf.samples - lo) / (hi - lo)


def _z_tables(model, z_shape, step):
    """Per-element (lo, cdf) for z from the per-channel factorized tables."""
    tables = model.prior.coding_tables(step)
    _, c, h, w = z_shape
    los, cdfs = [], []
    for ch in range(c):
        lo, cdf = tables[ch]
        los += [lo] * (h * w)
        cdfs += [cdf] * (h * w)
    return los, cdfs


def _z_estimate(model, z_q, step):
    with T.no_grad():
        lik = model.prior.likelihood(T.Tensor(z_q * step), step).data
    return float(-np.log2(np.maximum(lik, LIKELIHOOD_BOUND)).sum())


def _phase_masks(ctx, shape):
    """Boolean masks over the full latent, in decode order, as (group, mask) pairs."""
    _, m, h, w = shape
    if ctx.hyper_only:
        return [(0, np.ones(shape, dtype=bool))]
    anchors = anchor_mask(h, w).astype(bool)
    out = []
    for g in range(ctx.groups):
        chan = np.zeros(m, dtype=bool)
        chan[g * ctx.cg:(g + 1) * ctx.cg] = True
        for phase in (anchors, ~anchors):
            out.append((g, chan[None, :, None, None] & phase[None, None]))
    return out


def _predict(model, hyper, decoded, g):
    with T.no_grad():
        mu, sigma = model.context.predict(hyper, decoded, g)
    return mu.data, sigma.data


def check_model(model: LFCodecModel, lf: LightField4D):
    cfg = model.cfg
    if lf.A != cfg.A:
        raise ConfigError(f"light field has A={lf.A}, model expects {cfg.A}")
    if lf.channels != cfg.channels:
        raise ConfigError(f"light field has {lf.channels} channels, model expects {cfg.channels}")


def encode_lf(lf: LightField4D, model: LFCodecModel, model_hash: int, layout="sai") -> EncodeResult:
    """Code ``lf``; ``layout`` only records which file layout the decoder should write by default."""
    check_model(model, lf)
    cfg = model.cfg
    q = cfg.Q
    t0 = time.perf_counter()
    padded, rec = pad_lf(LightField4D(_normalise(lf)), HYPER_STRIDE)
    x = sai_to_macpi(padded).pixels[None]
    with T.no_grad():
        y = model.analysis(x).data
        z = model.hyper_analysis(T.Tensor(y)).data
    z_q = round_half_away(z / q).astype(np.int64)
    y_q = round_half_away(y / q).astype(np.int64)
    with T.no_grad():
        hyper = model.hyper_synthesis(T.Tensor(z_q * q))
    t1 = time.perf_counter()

    streams, reports = [], []
    enc = RangeEncoder()
    los, cdfs = _z_tables(model, z.shape, q)
    encode_with_tables(enc, z_q.ravel(), los, cdfs)
    streams.append(enc.finish())
    reports.append(StreamReport("z", z_q.size, len(streams[-1]), _z_estimate(model, z_q, q)))

    decoded = np.zeros(y.shape)
    masks = _phase_masks(model.context, y.shape)
    for g in sorted({g for g, _ in masks}):
        enc = RangeEncoder()
        est, count = 0.0, 0
        for _, mask in (item for item in masks if item[0] == g):
            mu, sigma = _predict(model, hyper, decoded, g)
            mu, sigma = _group_view(model, mu, sigma, g, mask)
            sym = y_q[mask]
            los, cdfs = gaussian_tables(mu, sigma, q)
            encode_with_tables(enc, sym, los, cdfs)
            p = gaussian_bin_likelihood(sym * q, mu, sigma, q)
            est += float(-np.log2(np.maximum(p, LIKELIHOOD_BOUND)).sum())
            count += sym.size
            decoded[mask] = sym * q
        streams.append(enc.finish())
        reports.append(StreamReport(f"y{g}", count, len(streams[-1]), est))
    t2 = time.perf_counter()

    lam_index = LAMBDA_LADDER.index(cfg.lam) if cfg.lam in LAMBDA_LADDER else -1
    hdr = bitstream.Header(
        flags=cfg.flag_bits | (bitstream.LAYOUT_MACPI if layout == "macpi" else 0), A=lf.A, H=lf.H, W=lf.W, channels=lf.channels, lambda_index=lam_index,
        pad_h=rec.pad_h, pad_w=rec.pad_w, Q=float(q), range_lo=lf.value_range[0], range_hi=lf.value_range[1],
        model_hash=int(model_hash), num_streams=len(streams),
    )
    data = bitstream.pack(hdr, streams)
    samples = lf.A * lf.A * lf.H * lf.W
    timings = {"analysis_s": t1 - t0, "entropy_s": t2 - t1}
    return EncodeResult(data, y_q, z_q, reports, samples, timings)


def _group_view(model, mu, sigma, g, mask):
    """Pick the masked elements of group g from group-shaped (mu, sigma)."""
    if model.context.hyper_only:
        return mu[mask], sigma[mask]
    cg = model.context.cg
    sub = mask[:, g * cg:(g + 1) * cg]
    return mu[sub], sigma[sub]


def decode_lf(data: bytes, model: LFCodecModel, model_hash: int) -> DecodeResult:
    hdr, streams = bitstream.unpack(data)
    if hdr.model_hash != int(model_hash):
        raise IntegrityError(f"bitstream needs model {hdr.model_hash:016x}, got {int(model_hash):016x}", 0)
    cfg = model.cfg
    if (hdr.A, hdr.channels, hdr.ablation_bits) != (cfg.A, cfg.channels, cfg.flag_bits) or hdr.Q != cfg.Q:
        raise ConfigError("bitstream header disagrees with the model configuration")
    q = hdr.Q
    rows, cols = hdr.A * (hdr.H + hdr.pad_h), hdr.A * (hdr.W + hdr.pad_w)
    if rows % HYPER_STRIDE or cols % HYPER_STRIDE:
        raise DecodeError("padded extent not a multiple of the hyper stride", 0)
    y_shape = (1, cfg.M, rows // LATENT_STRIDE, cols // LATENT_STRIDE)
    z_shape = (1, cfg.hyper, rows // HYPER_STRIDE, cols // HYPER_STRIDE)
    masks = _phase_masks(model.context, y_shape)
    groups = sorted({g for g, _ in masks})
    if len(streams) != 1 + len(groups):
        raise DecodeError(f"expected {1 + len(groups)} streams, found {len(streams)}", 0)

    los, cdfs = _z_tables(model, z_shape, q)
    z_q = decode_with_tables(RangeDecoder(streams[0]), los, cdfs).reshape(z_shape)
    with T.no_grad():
        hyper = model.hyper_synthesis(T.Tensor(z_q * q))

    decoded = np.zeros(y_shape)
    y_q = np.zeros(y_shape, dtype=np.int64)
    for g, stream in zip(groups, streams[1:]):
        dec = RangeDecoder(stream)
        for _, mask in (item for item in masks if item[0] == g):
            mu, sigma = _predict(model, hyper, decoded, g)
            mu, sigma = _group_view(model, mu, sigma, g, mask)
            los, cdfs = gaussian_tables(mu, sigma, q)
            sym = decode_with_tables(dec, los, cdfs)
            y_q[mask] = sym
            decoded[mask] = sym * q
    lf = reconstruct(model, y_q, hdr)
    return DecodeResult(lf, y_q, z_q, hdr)


def reconstruct(model: LFCodecModel, y_q, header: bitstream.Header) -> LightField4D:
    """Synthesis of given integer latents, cropped and scaled like ``decode_lf``."""
    with T.no_grad():
        x_hat = model.synthesis(T.Tensor(np.asarray(y_q) * header.Q)).data[0]
    sai = macpi_to_sai(MacPI(np.clip(x_hat, 0.0, 1.0), header.A))
    lf = crop_lf(sai, PadRecord(header.H, header.W, header.pad_h, header.pad_w))
    lo, hi = header.range_lo, header.range_hi
    return LightField4D(lo + (hi - lo) * lf.samples, (lo, hi))


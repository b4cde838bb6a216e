"""Encode/decode a set of light fields with one model and collect rate and quality."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lfcodec.codec.api import decode_lf, encode_lf
from lfcodec.metrics import psnr


@dataclass
class EvalRecord:
    label: str
    bpp: float
    psnr: float | None
    estimated_bpp: float
    payload_bpp: float
    latents_exact: bool


def evaluate_model(model, model_hash, lfs, labels=None, luma=False):
    """Full encode -> decode for every light field; returns one EvalRecord each."""
    labels = labels or [f"lf{i:02d}" for i in range(len(lfs))]
    out = []
    for label, lf in zip(labels, lfs):
        enc = encode_lf(lf, model, model_hash)
        dec = decode_lf(enc.data, model, model_hash)
        lo, hi = lf.value_range
        q = psnr(lf.samples, dec.lf.samples, peak=hi - lo, luma=luma)
        exact = bool(np.array_equal(dec.y_q, enc.y_q) and np.array_equal(dec.z_q, enc.z_q))
        out.append(EvalRecord(label, enc.bpp, q.db, enc.estimated_bits / enc.samples,
                              enc.payload_bits / enc.samples, exact))
    return out


def mean_point(records):
    """Average bpp and PSNR over records (lossless entries excluded from the PSNR mean)."""
    rates = [r.bpp for r in records]
    quals = [r.psnr for r in records if r.psnr is not None]
    return float(np.mean(rates)), (float(np.mean(quals)) if quals else None)


def ordering_violations(values, decreasing=True):
    """Adjacent pairs that break the expected order, as (index, relative size) tuples."""
    bad = []
    for i, (a, b) in enumerate(zip(values, values[1:])):
        wrong = b > a if decreasing else b < a
        if wrong:
            bad.append((i, abs(b - a) / max(abs(a), 1e-12)))
    return bad


def monotone_with_tolerance(values, max_inversions=1, max_size=0.02, decreasing=True):
    """True if at most ``max_inversions`` adjacent inversions occur, each no larger than ``max_size`` (relative)."""
    bad = ordering_violations(values, decreasing)
    return len(bad) <= max_inversions and all(size <= max_size for _, size in bad)

"""Quality and rate metrics: PSNR, bits per sample and Bjontegaard deltas."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from lfcodec.errors import MetricError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
MIN_CURVE_POINTS = 4


@dataclass(frozen=True)
class PSNR:
    """A PSNR value in dB; identical inputs are flagged ``lossless`` instead of reporting infinity."""

    db: float | None
    lossless: bool = False

    def __float__(self):
        if self.lossless:
            raise MetricError("lossless reconstruction has no finite PSNR")
        return float(self.db)


def to_luma(samples):
    """BT.601 luma from channel-first RGB samples; single-channel input is already luma."""
    s = np.asarray(samples, dtype=np.float64)
    if s.shape[0] == 1:
        return s
    if s.shape[0] != 3:
        raise MetricError(f"luma needs 3 channels, got {s.shape[0]}")
    return np.tensordot(np.asarray(LUMA_WEIGHTS), s, axes=1)[None]


def mse(x, x_hat):
    x, x_hat = np.asarray(x, dtype=np.float64), np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise MetricError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    return float(np.mean((x - x_hat) ** 2))


def psnr(x, x_hat, peak=1.0, luma=False) -> PSNR:
    """10 log10(peak^2 / MSE) with MSE over every sample (channel-averaged).

    With ``luma`` the channel-first inputs are converted to BT.601 luma first.
    """
    if luma:
        x, x_hat = to_luma(x), to_luma(x_hat)
    err = mse(x, x_hat)
    if err == 0.0:
        return PSNR(None, True)
    return PSNR(10.0 * math.log10(peak * peak / err))


def bpp(data, lf=None) -> float:
    """Total file bits divided by A^2 * H * W, header bytes included.

    ``data`` is the bitstream (bytes) or a path to it; extents come from its
    header and, if ``lf`` is given, must match it.
    """
    from lfcodec.codec.bitstream import parse_header

    if not isinstance(data, (bytes, bytearray)):
        with open(data, "rb") as fh:
            data = fh.read()
    hdr = parse_header(bytes(data))
    if lf is not None and (lf.A, lf.H, lf.W, lf.channels) != (hdr.A, hdr.H, hdr.W, hdr.channels):
        raise MetricError(
            f"bitstream describes A={hdr.A} {hdr.H}x{hdr.W}x{hdr.channels}, "
            f"light field is A={lf.A} {lf.H}x{lf.W}x{lf.channels}"
        )
    return bits_per_sample(8 * len(data), hdr.A, hdr.H, hdr.W)


def bits_per_sample(bits, A, H, W):
    return float(bits) / (A * A * H * W)


# RD curves ---------------------------------------------------------------------

@dataclass(frozen=True)
class RDPoint:
    bpp: float
    psnr: float | None
    lossless: bool = False

    def __post_init__(self):
        if not self.bpp > 0:
            raise MetricError(f"bpp must be positive, got {self.bpp}")
        if not self.lossless and (self.psnr is None or not math.isfinite(self.psnr)):
            raise MetricError("a lossy RD point needs a finite PSNR")


class RDCurve:
    """At least four lossy points with strictly increasing bpp (sorted on construction)."""

    def __init__(self, points, label=""):
        self.label = label
        pts = [p if isinstance(p, RDPoint) else RDPoint(*p) for p in points]
        lossy = [p for p in pts if not p.lossless]
        if len(lossy) < len(pts):
            warnings.warn(f"{label or 'curve'}: {len(pts) - len(lossy)} lossless point(s) excluded from fitting")
        lossy.sort(key=lambda p: (p.bpp, p.psnr))
        if len(lossy) < MIN_CURVE_POINTS:
            raise MetricError(f"{label or 'curve'}: need >= {MIN_CURVE_POINTS} lossy points, got {len(lossy)}")
        rates = [p.bpp for p in lossy]
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise MetricError(f"{label or 'curve'}: bpp values must be distinct")
        if any(b.psnr < a.psnr for a, b in zip(lossy, lossy[1:])):
            warnings.warn(f"{label or 'curve'}: PSNR decreases with bpp somewhere")
        self.points = lossy

    @property
    def bpp(self):
        return np.array([p.bpp for p in self.points])

    @property
    def psnr(self):
        return np.array([p.psnr for p in self.points])

    def __len__(self):
        return len(self.points)


def _as_curve(c):
    return c if isinstance(c, RDCurve) else RDCurve(c)


def _fit(x, y):
    """Cubic through 4 points (exact) or least-squares cubic for more."""
    order = np.argsort(x, kind="stable")
    return np.polyfit(np.asarray(x)[order], np.asarray(y)[order], 3)


def _mean_over(coeffs, lo, hi):
    integral = np.polyint(coeffs)
    return (np.polyval(integral, hi) - np.polyval(integral, lo)) / (hi - lo)


def _overlap(a, b, what):
    lo, hi = max(a.min(), b.min()), min(a.max(), b.max())
    if not hi > lo:
        raise MetricError(f"curves do not overlap in {what}")
    return lo, hi


def bd_rate(curve_a, curve_b) -> float:
    """Average rate difference of A relative to B at equal PSNR, in percent.

    Negative means curve A needs fewer bits.
    """
    a, b = _as_curve(curve_a), _as_curve(curve_b)
    lo, hi = _overlap(a.psnr, b.psnr, "PSNR")
    pa, pb = _fit(a.psnr, np.log10(a.bpp)), _fit(b.psnr, np.log10(b.bpp))
    if np.array_equal(pa, pb):
        return 0.0
    diff = _mean_over(pa, lo, hi) - _mean_over(pb, lo, hi)
    return float((10.0 ** diff - 1.0) * 100.0)


def bd_psnr(curve_a, curve_b) -> float:
    """Average PSNR difference of A relative to B at equal rate, in dB."""
    a, b = _as_curve(curve_a), _as_curve(curve_b)
    la, lb = np.log10(a.bpp), np.log10(b.bpp)
    lo, hi = _overlap(la, lb, "log-rate")
    pa, pb = _fit(la, a.psnr), _fit(lb, b.psnr)
    if np.array_equal(pa, pb):
        return 0.0
    return float(_mean_over(pa, lo, hi) - _mean_over(pb, lo, hi))


# CSV and tables -----------------------------------------------------------------

RD_FIELDS = ("label", "bpp", "psnr")


def write_rd_csv(path, rows):
    """``rows`` are (label, bpp, psnr) triples; psnr may be None for lossless points."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RD_FIELDS)
        for label, rate, quality in rows:
            w.writerow([label, repr(float(rate)), "lossless" if quality is None else repr(float(quality))])


def read_rd_csv(path):
    """Return rows as (label, bpp, psnr-or-None)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RD_FIELDS:
            raise MetricError(f"{path}: expected header {','.join(RD_FIELDS)}")
        rows = []
        for r in reader:
            q = None if r["psnr"] == "lossless" else float(r["psnr"])
            rows.append((r["label"], float(r["bpp"]), q))
    return rows


def curves_from_rows(rows):
    """Group (label, bpp, psnr) rows into one RDCurve per label."""
    grouped = {}
    for label, rate, quality in rows:
        grouped.setdefault(label, []).append(RDPoint(rate, quality, quality is None))
    return {label: RDCurve(pts, label) for label, pts in grouped.items()}


@dataclass(frozen=True)
class BDEntry:
    image: str
    baseline: str
    bd_rate: float
    bd_psnr: float


def bd_table(proposed: dict, baselines: dict):
    """BD-rate/BD-PSNR of the proposed curves against each named baseline, per image plus an average row.

    ``proposed`` maps image -> RDCurve; ``baselines`` maps baseline name -> {image -> RDCurve}.
    Images missing from a baseline are skipped for that baseline.
    """
    entries = []
    for name, curves in baselines.items():
        rates, gains = [], []
        for image in sorted(proposed):
            if image not in curves:
                continue
            r, g = bd_rate(proposed[image], curves[image]), bd_psnr(proposed[image], curves[image])
            entries.append(BDEntry(image, name, r, g))
            rates.append(r)
            gains.append(g)
        if rates:
            entries.append(BDEntry("Average", name, float(np.mean(rates)), float(np.mean(gains))))
    return entries


def write_bd_csv(path, entries):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image", "baseline", "bd_rate_percent", "bd_psnr_db"])
        for e in entries:
            w.writerow([e.image, e.baseline, f"{e.bd_rate:.4f}", f"{e.bd_psnr:.4f}"])


def format_bd_table(entries, proposed_name="Pro."):
    """Aligned text: one row per image, a BD-BR(%) / BD-PSNR(dB) column pair per baseline."""
    baselines = list(dict.fromkeys(e.baseline for e in entries))
    images = [i for i in dict.fromkeys(e.image for e in entries) if i != "Average"]
    if any(e.image == "Average" for e in entries):
        images.append("Average")
    lookup = {(e.image, e.baseline): e for e in entries}
    head1 = ["Image"] + [f"{proposed_name} vs. {b}" for b in baselines for _ in (0, 1)]
    head2 = [""] + ["BD-BR(%)", "BD-PSNR(dB)"] * len(baselines)
    body = []
    for image in images:
        row = [image]
        for b in baselines:
            e = lookup.get((image, b))
            row += ["-", "-"] if e is None else [f"{e.bd_rate:.2f}", f"{e.bd_psnr:.2f}"]
        body.append(row)
    table = [head1, head2] + body
    widths = [max(len(r[i]) for r in table) for i in range(len(head1))]
    lines = ["  ".join(cell.rjust(w) if j else cell.ljust(w) for j, (cell, w) in enumerate(zip(r, widths))) for r in table]
    lines.insert(2, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"

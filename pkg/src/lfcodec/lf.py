"""Light-field containers and lossless re-arrangements between SAI, MacPI and EPI views.

Samples are stored channel-major as ``samples[c, u, v, h, w]``. The MacPI
layout is fixed as ``macpi[c, h*A + u, w*A + v] = L(c, u, v, h, w)``: each
spatial site expands into an A x A block of angular samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lfcodec.errors import AlignmentError, ShapeError


@dataclass
class LightField4D:
    samples: np.ndarray
    value_range: tuple = (0.0, 1.0)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 4:
            s = s[None]
        if s.ndim != 5 or min(s.shape) < 1:
            raise ShapeError(f"light field needs shape (C, U, V, H, W), got {s.shape}")
        self.samples = s
        self.value_range = (float(self.value_range[0]), float(self.value_range[1]))

    @property
    def channels(self):
        return self.samples.shape[0]

    @property
    def U(self):
        return self.samples.shape[1]

    @property
    def V(self):
        return self.samples.shape[2]

    @property
    def H(self):
        return self.samples.shape[3]

    @property
    def W(self):
        return self.samples.shape[4]

    @property
    def A(self):
        if self.U != self.V:
            raise ShapeError(f"non-square angular grid {self.U}x{self.V}")
        return self.U

    def in_range(self):
        lo, hi = self.value_range
        return bool(np.all((self.samples >= lo) & (self.samples <= hi)))

    def sai(self, u, v):
        return self.samples[:, u, v]

    def __eq__(self, other):
        return (
            isinstance(other, LightField4D)
            and self.samples.shape == other.samples.shape
            and self.value_range == other.value_range
            and np.array_equal(self.samples, other.samples)
        )


@dataclass
class MacPI:
    pixels: np.ndarray  # (C, A*H, A*W)
    A: int
    value_range: tuple = (0.0, 1.0)

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.float64)
        if p.ndim == 2:
            p = p[None]
        if p.ndim != 3:
            raise ShapeError(f"MacPI needs shape (C, AH, AW), got {p.shape}")
        self.pixels = p
        self.A = int(self.A)

    @property
    def H(self):
        return self.pixels.shape[1] // self.A

    @property
    def W(self):
        return self.pixels.shape[2] // self.A


@dataclass
class EPIStack:
    planes: list
    axis_pair: str
    fixed_indices: dict


@dataclass(frozen=True)
class PatchSpec:
    origin: tuple = (0, 0)
    size: tuple = (64, 64)
    stride: tuple = (64, 64)


@dataclass(frozen=True)
class PadRecord:
    H: int
    W: int
    pad_h: int = 0
    pad_w: int = 0

    @property
    def is_identity(self):
        return self.pad_h == 0 and self.pad_w == 0


def sai_to_macpi(lf: LightField4D) -> MacPI:
    a = lf.A
    c, _, _, h, w = lf.samples.shape
    pixels = lf.samples.transpose(0, 3, 1, 4, 2).reshape(c, h * a, w * a)
    return MacPI(pixels.copy(), a, lf.value_range)


def macpi_to_sai(m: MacPI) -> LightField4D:
    a = m.A
    c, rows, cols = m.pixels.shape
    if a < 1 or rows % a or cols % a:
        raise ShapeError(f"MacPI extent {rows}x{cols} not divisible by A={a}")
    h, w = rows // a, cols // a
    samples = m.pixels.reshape(c, h, a, w, a).transpose(0, 2, 4, 1, 3)
    return LightField4D(samples.copy(), m.value_range)


_EPI_AXES = {
    # pair -> (varying axes, held axes), axes named over (u, v, h, w)
    "U-H": (("u", "h"), ("v", "w")),
    "V-W": (("v", "w"), ("u", "h")),
    "U-W": (("u", "w"), ("v", "h")),
    "V-H": (("v", "h"), ("u", "w")),
}
_AXIS_POS = {"u": 1, "v": 2, "h": 3, "w": 4}


def extract_epi(lf: LightField4D, axis_pair: str, fixed_indices: dict) -> EPIStack:
    """Gather the 2-D slice with ``axis_pair`` varying and the other two axes held.

    ``fixed_indices`` maps the held axis names to indices, e.g. ``{"v": 0, "w": 3}``
    for ``"U-H"``. Returns one plane per channel, indexed ``plane[i, j]`` in the
    order the pair is named.
    """
    if axis_pair not in _EPI_AXES:
        raise ValueError(f"axis_pair must be one of {sorted(_EPI_AXES)}")
    varying, held = _EPI_AXES[axis_pair]
    if set(fixed_indices) != set(held):
        raise ValueError(f"{axis_pair} needs fixed indices for {held}, got {sorted(fixed_indices)}")
    index = [slice(None)] * 5
    for name in held:
        i = int(fixed_indices[name])
        extent = lf.samples.shape[_AXIS_POS[name]]
        if not 0 <= i < extent:
            raise IndexError(f"{name}={i} outside [0, {extent})")
        index[_AXIS_POS[name]] = i
    sub = lf.samples[tuple(index)]  # (C, first varying, second varying) in u,v,h,w order
    planes = [np.array(p) for p in sub]
    return EPIStack(planes, axis_pair, {k: int(v) for k, v in fixed_indices.items()})


def pad_lf(lf: LightField4D, multiple: int):
    """Edge-replicate the spatial extents so that U*H and V*W are multiples of ``multiple``."""
    if multiple < 1:
        raise ValueError("padding multiple must be >= 1")
    pad_h = _pad_amount(lf.U, lf.H, multiple)
    pad_w = _pad_amount(lf.V, lf.W, multiple)
    rec = PadRecord(lf.H, lf.W, pad_h, pad_w)
    if rec.is_identity:
        return LightField4D(lf.samples.copy(), lf.value_range), rec
    s = np.pad(lf.samples, ((0, 0), (0, 0), (0, 0), (0, pad_h), (0, pad_w)), mode="edge")
    return LightField4D(s, lf.value_range), rec


def _pad_amount(a, n, multiple):
    extra = 0
    while (a * (n + extra)) % multiple:
        extra += 1
    return extra


def crop_lf(lf: LightField4D, rec: PadRecord) -> LightField4D:
    return LightField4D(lf.samples[..., : rec.H, : rec.W].copy(), lf.value_range)


def crop_patches(m: MacPI, spec: PatchSpec) -> list:
    """Tile ``m`` with patches starting at ``spec.origin``; all offsets must sit on macro-pixel edges."""
    a = m.A
    (r0, c0), (ph, pw), (sh, sw) = spec.origin, spec.size, spec.stride
    if min(ph, pw, sh, sw) < 1 or min(r0, c0) < 0:
        raise ShapeError(f"invalid patch spec {spec}")
    if any(v % a for v in (r0, c0, ph, pw, sh, sw)):
        raise AlignmentError(f"patch spec {spec} not aligned to macro-pixel size {a}")
    _, rows, cols = m.pixels.shape
    if r0 + ph > rows or c0 + pw > cols:
        raise ShapeError(f"patch {spec.size} at {spec.origin} exceeds MacPI extent {rows}x{cols}")
    out = []
    for r in range(r0, rows - ph + 1, sh):
        for c in range(c0, cols - pw + 1, sw):
            out.append(MacPI(m.pixels[:, r:r + ph, c:c + pw].copy(), a, m.value_range))
    return out

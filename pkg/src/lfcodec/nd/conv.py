"""2-D convolution and transposed convolution over NCHW tensors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from lfcodec.errors import ShapeError
from lfcodec.nd.tensor import as_tensor, make_op, pad2d

# Names of deliberately broken backward rules, switched on only by the
# self-test negative control.
_faults: set = set()


def set_fault(name: str, enabled: bool = True) -> None:
    if enabled:
        _faults.add(name)
    else:
        _faults.discard(name)


def _pair(v):
    if np.isscalar(v):
        return int(v), int(v)
    a, b = v
    return int(a), int(b)


def normalize_padding(padding):
    """Accept ``p``, ``(ph, pw)`` or ``((top, bottom), (left, right))``."""
    if np.isscalar(padding):
        p = int(padding)
        return (p, p), (p, p)
    ph, pw = padding
    ph = (int(ph), int(ph)) if np.isscalar(ph) else (int(ph[0]), int(ph[1]))
    pw = (int(pw), int(pw)) if np.isscalar(pw) else (int(pw[0]), int(pw[1]))
    return ph, pw


def same_padding(kernel, dilation=1):
    """Stride-1 padding that preserves extent; the extra pixel of an even span goes bottom/right."""
    (kh, kw), (dh, dw) = _pair(kernel), _pair(dilation)
    out = []
    for k, d in ((kh, dh), (kw, dw)):
        span = d * (k - 1)
        out.append((span // 2, span - span // 2))
    return tuple(out)


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple = (3, 3)
    stride: tuple = (1, 1)
    dilation: tuple = (1, 1)
    padding: tuple = ((0, 0), (0, 0))
    pad_mode: str = "zero"

    def __post_init__(self):
        object.__setattr__(self, "kernel", _pair(self.kernel))
        object.__setattr__(self, "stride", _pair(self.stride))
        object.__setattr__(self, "dilation", _pair(self.dilation))
        object.__setattr__(self, "padding", normalize_padding(self.padding))
        vals = (self.in_channels, self.out_channels) + self.kernel + self.stride + self.dilation
        if min(vals) < 1:
            raise ShapeError(f"conv extents must be >= 1, got {self}")
        if min(sum(self.padding, ())) < 0:
            raise ShapeError("padding must be non-negative")
        if self.pad_mode not in ("zero", "replicate"):
            raise ShapeError(f"unknown pad mode {self.pad_mode!r}")

    def out_shape(self, h, w):
        """floor((in + pads - d*(k-1) - 1) / s) + 1 per axis."""
        res = []
        for n, (p0, p1), k, s, d in zip((h, w), self.padding, self.kernel, self.stride, self.dilation):
            span = n + p0 + p1 - d * (k - 1)
            if span < 1:
                raise ShapeError(f"input extent {n} smaller than the effective kernel span")
            res.append((span - 1) // s + 1)
        return tuple(res)


def _im2col(xp, kernel, stride, dilation, out_hw):
    """Receptive fields as columns: shape (C*kh*kw, N*Ho*Wo)."""
    (kh, kw), (sh, sw), (dh, dw), (ho, wo) = kernel, stride, dilation, out_hw
    win = sliding_window_view(xp, (dh * (kh - 1) + 1, dw * (kw - 1) + 1), axis=(2, 3))
    cols = win[:, :, : sh * (ho - 1) + 1 : sh, : sw * (wo - 1) + 1 : sw, ::dh, ::dw]
    n, c = xp.shape[:2]
    return np.ascontiguousarray(cols.transpose(1, 4, 5, 0, 2, 3)).reshape(c * kh * kw, n * ho * wo)


def _to_nchw(mat, n, hw):
    """(O, N*H*W) -> contiguous (N, O, H, W)."""
    return np.ascontiguousarray(mat.reshape(mat.shape[0], n, *hw).transpose(1, 0, 2, 3))


def _to_cm(a):
    """(N, C, H, W) -> (C, N*H*W)."""
    return np.ascontiguousarray(a.transpose(1, 0, 2, 3)).reshape(a.shape[1], -1)


def _correlate(xp, wmat, kernel, stride, dilation, out_hw):
    cols = _im2col(xp, kernel, stride, dilation, out_hw)
    return _to_nchw(wmat @ cols, xp.shape[0], out_hw), cols


def _input_grad(g, gm, weight, xp_shape, kernel, stride, dilation, out_hw):
    """Adjoint of the strided correlation, on the padded input grid."""
    (kh, kw), (sh, sw), (dh, dw), (ho, wo) = kernel, stride, dilation, out_hw
    n, o = g.shape[:2]
    c, hp, wp = xp_shape[1:]
    if sh == sw == 1:
        # Full correlation of the zero-padded upstream gradient with the flipped kernel.
        eh, ew = dh * (kh - 1), dw * (kw - 1)
        gp = np.zeros((n, o, hp + eh, wp + ew))
        gp[:, :, eh:eh + ho, ew:ew + wo] = g
        wf = weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, -1)
        gx, _ = _correlate(gp, wf, kernel, (1, 1), dilation, (hp, wp))
        return gx
    gcols = (weight.reshape(o, -1).T @ gm).reshape(c, kh, kw, n, ho, wo)
    gxp = np.zeros(xp_shape)
    if (kh, kw) == (sh, sw) and dh == dw == 1:
        # Non-overlapping windows tile the input exactly.
        tiles = gcols.transpose(3, 0, 4, 1, 5, 2).reshape(n, c, ho * kh, wo * kw)
        gxp[:, :, : ho * kh, : wo * kw] = tiles
        return gxp
    for i in range(kh):
        r0 = i * dh
        for j in range(kw):
            c0 = j * dw
            gxp[:, :, r0 : r0 + sh * (ho - 1) + 1 : sh, c0 : c0 + sw * (wo - 1) + 1 : sw] += (
                gcols[:, i, j].transpose(1, 0, 2, 3)
            )
    return gxp


def conv2d(x, weight, bias=None, stride=1, dilation=1, padding=0, pad_mode="zero"):
    """Cross-correlation of ``x`` [N,C,H,W] with ``weight`` [O,C,kh,kw]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape}, {weight.shape}")
    n, c = x.shape[:2]
    o, cw, kh, kw = weight.shape
    if c != cw:
        raise ShapeError(f"input has {c} channels, weight expects {cw}")
    (sh, sw), (dh, dw) = _pair(stride), _pair(dilation)
    pads = normalize_padding(padding)
    if pad_mode == "replicate":
        x = pad2d(x, pads, "replicate")
        pads = ((0, 0), (0, 0))
    elif pad_mode != "zero":
        raise ShapeError(f"unknown pad mode {pad_mode!r}")
    spec = ConvSpec(c, o, (kh, kw), (sh, sw), (dh, dw), pads)
    ho, wo = spec.out_shape(*x.shape[2:])

    (pt, pb), (pl, pr) = pads
    if pt or pb or pl or pr:
        xp = np.zeros((n, c, x.shape[2] + pt + pb, x.shape[3] + pl + pr))
        xp[:, :, pt : pt + x.shape[2], pl : pl + x.shape[3]] = x.data
    else:
        xp = x.data
    wmat = weight.data.reshape(o, -1)
    pointwise = kh == kw == sh == sw == 1
    if pointwise:
        cols = _to_cm(xp)
        out = _to_nchw(wmat @ cols, n, (ho, wo))
    else:
        out, cols = _correlate(xp, wmat, (kh, kw), (sh, sw), (dh, dw), (ho, wo))
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise ShapeError(f"bias shape {bias.shape} != ({o},)")
        out += bias.data[None, :, None, None]
        parents.append(bias)

    def backward(g):
        gx = gw = gb = None
        gm = _to_cm(g)
        if x.requires_grad:
            if pointwise:
                gxp = _to_nchw(wmat.T @ gm, n, (ho, wo))
            else:
                gxp = _input_grad(g, gm, weight.data, xp.shape, (kh, kw), (sh, sw), (dh, dw), (ho, wo))
            gx = gxp[:, :, pt : pt + x.shape[2], pl : pl + x.shape[3]]
        if weight.requires_grad:
            gw = (gm @ cols.T).reshape(weight.shape)
            if "conv2d_weight" in _faults:
                gw = gw * 1.05
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb)[: len(parents)]

    return make_op(out, parents, backward)


def deconv2d(x, weight, bias=None, stride=2, padding=0):
    """Transposed convolution; ``weight`` is [C_in, C_out, kh, kw].

    Output extent per axis is ``(in - 1) * s + k - 2p``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"deconv2d expects 4-D input and weight, got {x.shape}, {weight.shape}")
    n, c, h, w = x.shape
    ci, o, kh, kw = weight.shape
    if c != ci:
        raise ShapeError(f"input has {c} channels, weight expects {ci}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    full_h, full_w = (h - 1) * sh + kh, (w - 1) * sw + kw
    if full_h - 2 * ph < 1 or full_w - 2 * pw < 1:
        raise ShapeError("transposed conv padding exceeds output extent")

    cols = np.tensordot(x.data, weight.data, axes=([1], [0]))  # [N, H, W, O, kh, kw]
    full = np.zeros((n, o, full_h, full_w))
    for a in range(kh):
        for b in range(kw):
            full[:, :, a : a + sh * (h - 1) + 1 : sh, b : b + sw * (w - 1) + 1 : sw] += cols[..., a, b].transpose(0, 3, 1, 2)
    out = full[:, :, ph : full_h - ph, pw : full_w - pw]
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise ShapeError(f"bias shape {bias.shape} != ({o},)")
        out = out + bias.data[None, :, None, None]
        parents.append(bias)
    out = np.ascontiguousarray(out)

    def backward(g):
        gfull = np.zeros((n, o, full_h, full_w))
        gfull[:, :, ph : full_h - ph, pw : full_w - pw] = g
        taps = np.empty((n, o, kh, kw, h, w))
        for a in range(kh):
            for b in range(kw):
                taps[:, :, a, b] = gfull[:, :, a : a + sh * (h - 1) + 1 : sh, b : b + sw * (w - 1) + 1 : sw]
        gx = gw = gb = None
        if x.requires_grad:
            gx = np.tensordot(taps, weight.data, axes=([1, 2, 3], [1, 2, 3])).transpose(0, 3, 1, 2)
        if weight.requires_grad:
            gw = np.tensordot(x.data, taps, axes=([0, 2, 3], [0, 4, 5]))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb)[: len(parents)]

    return make_op(out, parents, backward)


def conv_sum_same(x, weights, biases=()):
    """Sum of stride-1, same-padded (zero) convolutions of one input.

    Equivalent to ``sum(conv2d(x, w, b, padding=same_padding(w.shape[2:])))``
    but builds a single column matrix over the union of the kernel taps.
    """
    x = as_tensor(x)
    weights = [as_tensor(w) for w in weights]
    biases = [as_tensor(b) for b in biases]
    if x.ndim != 4:
        raise ShapeError(f"conv_sum_same expects a 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    o = weights[0].shape[0]
    taps = {}
    top = left = bottom = right = 0
    for k, wt in enumerate(weights):
        if wt.ndim != 4 or wt.shape[:2] != (o, c):
            raise ShapeError(f"kernel {k} has shape {wt.shape}, expected ({o}, {c}, kh, kw)")
        kh, kw = wt.shape[2:]
        (pt, pb), (pl, pr) = same_padding((kh, kw))
        top, bottom, left, right = max(top, pt), max(bottom, pb), max(left, pl), max(right, pr)
        for i in range(kh):
            for j in range(kw):
                taps.setdefault((i - pt, j - pl), []).append((k, i, j))
    offsets = sorted(taps)
    xp = np.zeros((n, c, h + top + bottom, w + left + right))
    xp[:, :, top:top + h, left:left + w] = x.data
    xt = xp.transpose(1, 0, 2, 3)
    cols = np.empty((c, len(offsets), n, h, w))
    for t, (di, dj) in enumerate(offsets):
        cols[:, t] = xt[:, :, top + di:top + di + h, left + dj:left + dj + w]
    cols = cols.reshape(c * len(offsets), -1)
    wmat = np.zeros((o, c, len(offsets)))
    for t, off in enumerate(offsets):
        for k, i, j in taps[off]:
            wmat[:, :, t] += weights[k].data[:, :, i, j]
    wmat = wmat.reshape(o, -1)
    out = _to_nchw(wmat @ cols, n, (h, w))
    for b in biases:
        if b.shape != (o,):
            raise ShapeError(f"bias shape {b.shape} != ({o},)")
        out += b.data[None, :, None, None]
    parents = [x] + weights + biases

    def backward(g):
        gm = _to_cm(g)
        grads = []
        if x.requires_grad:
            gcols = (wmat.T @ gm).reshape(c, len(offsets), n, h, w)
            gxt = np.zeros((c, n) + xp.shape[2:])
            for t, (di, dj) in enumerate(offsets):
                gxt[:, :, top + di:top + di + h, left + dj:left + dj + w] += gcols[:, t]
            grads.append(gxt[:, :, top:top + h, left:left + w].transpose(1, 0, 2, 3))
        else:
            grads.append(None)
        gw_union = (gm @ cols.T).reshape(o, c, len(offsets))
        if "conv2d_weight" in _faults:
            gw_union = gw_union * 1.05
        for k, wt in enumerate(weights):
            if not wt.requires_grad:
                grads.append(None)
                continue
            gw = np.zeros(wt.shape)
            for t, off in enumerate(offsets):
                for kk, i, j in taps[off]:
                    if kk == k:
                        gw[:, :, i, j] = gw_union[:, :, t]
            grads.append(gw)
        gb = g.sum(axis=(0, 2, 3))
        grads += [gb if b.requires_grad else None for b in biases]
        return tuple(grads)

    return make_op(out, parents, backward)

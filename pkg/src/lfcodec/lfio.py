"""Reading and writing light fields as SAI directories or MacPI images with a manifest.

SAI directories hold ``view_{u}_{v}.<ext>`` files. A MacPI image is paired
with a key-value manifest (``A=``, ``H=``, ``W=``, ``channels=``, ``range=``).
Images may be PNG, PGM/PPM, or ``.npy`` (lossless float64).
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

from lfcodec.errors import ShapeError
from lfcodec.lf import LightField4D, MacPI, macpi_to_sai, sai_to_macpi

IMAGE_SUFFIXES = (".png", ".pgm", ".ppm", ".npy")
_VIEW_RE = re.compile(r"^view_(\d+)_(\d+)$")


def read_image(path, value_range=(0.0, 1.0)) -> np.ndarray:
    """Return a (C, H, W) float array scaled into ``value_range``."""
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path).astype(np.float64)
        return arr[None] if arr.ndim == 2 else arr
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            raw, peak = np.asarray(im, dtype=np.float64), 65535.0
        else:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            raw, peak = np.asarray(im, dtype=np.float64), 255.0
    arr = raw[None] if raw.ndim == 2 else raw.transpose(2, 0, 1)
    lo, hi = value_range
    return lo + (hi - lo) * arr / peak


def write_image(path, arr, value_range=(0.0, 1.0)):
    path = Path(path)
    arr = np.asarray(arr, dtype=np.float64)
    if path.suffix == ".npy":
        np.save(path, arr)
        return
    lo, hi = value_range
    q = np.clip(np.round((arr - lo) / (hi - lo) * 255.0), 0, 255).astype(np.uint8)
    if q.shape[0] == 1:
        Image.fromarray(q[0], mode="L").save(path)
    elif q.shape[0] == 3:
        Image.fromarray(q.transpose(1, 2, 0), mode="RGB").save(path)
    else:
        raise ShapeError(f"cannot write {q.shape[0]}-channel image as {path.suffix}")


def read_manifest(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, val = line.partition("=")
        out[key.strip()] = val.strip()
    if "range" in out:
        lo, hi = (float(v) for v in out["range"].split(","))
        out["range"] = (lo, hi)
    for key in ("A", "H", "W", "channels"):
        if key in out:
            out[key] = int(out[key])
    return out


def write_manifest(path, A, H, W, channels, value_range=(0.0, 1.0)):
    lo, hi = value_range
    Path(path).write_text(f"A={A}\nH={H}\nW={W}\nchannels={channels}\nrange={lo!r},{hi!r}\n")


def manifest_path_for(image_path) -> Path:
    p = Path(image_path)
    return p.with_name(p.stem + ".manifest")


def read_sai_dir(path, value_range=(0.0, 1.0)) -> LightField4D:
    views = {}
    for f in sorted(Path(path).iterdir()):
        m = _VIEW_RE.match(f.stem)
        if m and f.suffix.lower() in IMAGE_SUFFIXES:
            views[int(m.group(1)), int(m.group(2))] = f
    if not views:
        raise FileNotFoundError(f"no view_<u>_<v> images in {path}")
    U = max(u for u, _ in views) + 1
    V = max(v for _, v in views) + 1
    if len(views) != U * V:
        raise ShapeError(f"incomplete SAI grid: {len(views)} files for a {U}x{V} grid")
    first = read_image(views[0, 0], value_range)
    samples = np.empty((first.shape[0], U, V) + first.shape[1:])
    for (u, v), f in views.items():
        img = read_image(f, value_range)
        if img.shape != first.shape:
            raise ShapeError(f"{f.name} has shape {img.shape}, expected {first.shape}")
        samples[:, u, v] = img
    return LightField4D(samples, value_range)


def write_sai_dir(path, lf: LightField4D, suffix=".png"):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for u in range(lf.U):
        for v in range(lf.V):
            write_image(path / f"view_{u}_{v}{suffix}", lf.samples[:, u, v], lf.value_range)


def read_macpi(path, manifest=None) -> LightField4D:
    manifest = read_manifest(manifest or manifest_path_for(path))
    if "A" not in manifest:
        raise ShapeError("MacPI manifest must declare A")
    value_range = manifest.get("range", (0.0, 1.0))
    pixels = read_image(path, value_range)
    lf = macpi_to_sai(MacPI(pixels, manifest["A"], value_range))
    for key, got in (("H", lf.H), ("W", lf.W), ("channels", lf.channels)):
        if key in manifest and manifest[key] != got:
            raise ShapeError(f"manifest {key}={manifest[key]} but image gives {got}")
    return lf


def write_macpi(path, lf: LightField4D):
    m = sai_to_macpi(lf)
    write_image(path, m.pixels, lf.value_range)
    write_manifest(manifest_path_for(path), lf.A, lf.H, lf.W, lf.channels, lf.value_range)


def read_lf(path, manifest=None, value_range=(0.0, 1.0)) -> LightField4D:
    """Dispatch on layout: a directory is an SAI grid, a file is a MacPI."""
    path = Path(path)
    if path.is_dir():
        return read_sai_dir(path, value_range)
    return read_macpi(path, manifest)


def write_lf(path, lf: LightField4D, layout="sai", suffix=".png"):
    if layout == "sai":
        write_sai_dir(path, lf, suffix)
    elif layout == "macpi":
        write_macpi(path, lf)
    else:
        raise ValueError(f"unknown layout {layout!r}")


__all__ = [
    "read_image", "write_image", "read_manifest", "write_manifest", "read_sai_dir",
    "write_sai_dir", "read_macpi", "write_macpi", "read_lf", "write_lf", "sai_to_macpi",
]

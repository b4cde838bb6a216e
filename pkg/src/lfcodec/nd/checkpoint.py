"""Binary parameter checkpoints (``LFT1``).

Layout, all integers little-endian::

    b"LFT1"
    u32 meta_len, meta_len bytes of UTF-8 JSON (model configuration)
    u32 record_count
    per record: u32 name_len, name (UTF-8), u32 rank, rank x u32 extents,
                prod(extents) x f64 values (row-major)
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from lfcodec.errors import DecodeError

MAGIC = b"LFT1"


def dumps(state: dict, meta: dict | None = None) -> bytes:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<I", len(meta_bytes)), meta_bytes, struct.pack("<I", len(state))]
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        key = name.encode()
        parts.append(struct.pack("<I", len(key)) + key)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(blob: bytes):
    """Return ``(state, meta)``."""
    if blob[:4] != MAGIC:
        raise DecodeError("not an LFT1 checkpoint", 0)
    try:
        pos = 4
        (meta_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        meta = json.loads(blob[pos:pos + meta_len].decode())
        pos += meta_len
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        state = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + name_len].decode()
            pos += name_len
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            n = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * n > len(blob):
                raise DecodeError(f"truncated record {name!r}", pos)
            state[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * n
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError(f"corrupt checkpoint: {exc}") from exc
    return state, meta


def model_hash(blob: bytes) -> int:
    """64-bit identifier of a serialised checkpoint."""
    return int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "little")


def save(path, state, meta=None) -> int:
    blob = dumps(state, meta)
    Path(path).write_bytes(blob)
    return model_hash(blob)


def load(path):
    blob = Path(path).read_bytes()
    state, meta = loads(blob)
    return state, meta, model_hash(blob)

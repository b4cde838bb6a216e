"""``LFB1`` container: fixed little-endian header followed by length-prefixed, CRC-checked streams."""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

from lfcodec.errors import DecodeError, IntegrityError

MAGIC = b"LFB1"
VERSION = 1
ABLATION_MASK = 0x1F
LAYOUT_MACPI = 0x80  # flag bit: the encoder's input was a MacPI file
# magic, version, flags, A, H, W, channels, lambda index, pad_h, pad_w, Q, range lo, range hi, model hash, streams
_HEADER = struct.Struct("<4sBBHHHBbHHdddQB")
HEADER_SIZE = _HEADER.size + 4  # plus CRC32 of the preceding bytes


@dataclass(frozen=True)
class Header:
    flags: int
    A: int
    H: int
    W: int
    channels: int
    lambda_index: int
    pad_h: int
    pad_w: int
    Q: float
    range_lo: float
    range_hi: float
    model_hash: int
    num_streams: int
    version: int = VERSION

    @property
    def ablation_bits(self):
        return self.flags & ABLATION_MASK

    @property
    def layout(self):
        return "macpi" if self.flags & LAYOUT_MACPI else "sai"

    def pack(self) -> bytes:
        body = _HEADER.pack(
            MAGIC, self.version, self.flags, self.A, self.H, self.W, self.channels, self.lambda_index,
            self.pad_h, self.pad_w, self.Q, self.range_lo, self.range_hi, self.model_hash, self.num_streams,
        )
        return body + struct.pack("<I", zlib.crc32(body))


def encode_varint(n: int) -> bytes:
    """Unsigned LEB128."""
    if n < 0:
        raise ValueError("varint must be non-negative")
    out = bytearray()
    while True:
        byte = n & 0x7F
        n >>= 7
        if n:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def decode_varint(data: bytes, pos: int):
    value = shift = 0
    start = pos
    while True:
        if pos >= len(data):
            raise DecodeError("truncated varint", start)
        byte = data[pos]
        pos += 1
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return value, pos
        shift += 7
        if shift > 63:
            raise DecodeError("varint too long", start)


def parse_header(data: bytes) -> Header:
    if len(data) < 4 or data[:4] != MAGIC:
        raise DecodeError("not an LFB1 bitstream (bad magic)", 0)
    if len(data) < HEADER_SIZE:
        raise DecodeError("truncated header", len(data))
    body = data[: _HEADER.size]
    (crc,) = struct.unpack_from("<I", data, _HEADER.size)
    if zlib.crc32(body) != crc:
        raise IntegrityError("header CRC mismatch", _HEADER.size)
    fields = _HEADER.unpack(body)
    version = fields[1]
    if version != VERSION:
        raise DecodeError(f"unsupported bitstream version {version}", 4)
    hdr = Header(*fields[2:], version=version)
    if hdr.A < 1 or hdr.H < 1 or hdr.W < 1 or hdr.channels < 1 or hdr.Q <= 0:
        raise DecodeError("header describes an empty or invalid light field", 6)
    return hdr


def pack(header: Header, streams) -> bytes:
    if header.num_streams != len(streams):
        raise ValueError("header stream count disagrees with the payload")
    parts = [header.pack()]
    for s in streams:
        parts.append(encode_varint(len(s)))
        parts.append(struct.pack("<I", zlib.crc32(s)))
        parts.append(bytes(s))
    return b"".join(parts)


def unpack(data: bytes):
    """Return ``(header, streams)``; every stream's CRC32 is verified."""
    data = bytes(data)
    hdr = parse_header(data)
    pos = HEADER_SIZE
    streams = []
    for i in range(hdr.num_streams):
        n, pos = decode_varint(data, pos)
        if pos + 4 + n > len(data):
            raise DecodeError(f"stream {i} truncated", pos)
        (crc,) = struct.unpack_from("<I", data, pos)
        pos += 4
        s = data[pos:pos + n]
        if zlib.crc32(s) != crc:
            raise IntegrityError(f"stream {i} CRC mismatch", pos)
        streams.append(s)
        pos += n
    if pos != len(data):
        raise DecodeError(f"{len(data) - pos} trailing bytes after the last stream", pos)
    return hdr, streams

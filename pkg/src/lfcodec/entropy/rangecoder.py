"""Carry-propagating range coder with 16-bit probability precision.

The encoder keeps a 33-bit ``low`` (bit 32 is a pending carry) and a 32-bit
``range``; output bytes are delayed in a one-byte cache plus a run of 0xFF
bytes so that carries can ripple into them. The final interval is closed on
the value with the most trailing zero bits and those zero bytes are dropped;
the decoder reads missing trailing bytes as zero.
"""

from __future__ import annotations

import numpy as np

from lfcodec.errors import DecodeError

PRECISION = 16
TOTAL = 1 << PRECISION
_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF
_OVERREAD_LIMIT = 8


def pmf_to_cdf(pmf) -> np.ndarray:
    """Quantise probability rows to integer CDFs summing to 2**16, every frequency >= 1.

    Accepts a 1-D pmf or a 2-D array of pmf rows; returns int64 CDFs with a
    leading 0 (shape ``(..., n + 1)``).
    """
    p = np.asarray(pmf, dtype=np.float64)
    squeeze = p.ndim == 1
    p = np.atleast_2d(p)
    n = p.shape[1]
    if n > TOTAL:
        raise ValueError(f"alphabet of {n} symbols exceeds coder precision")
    p = np.clip(p, 0.0, None)
    p = p / p.sum(axis=1, keepdims=True)
    freq = np.floor(p * (TOTAL - n)).astype(np.int64) + 1
    rest = TOTAL - freq.sum(axis=1)
    freq[np.arange(p.shape[0]), np.argmax(p, axis=1)] += rest
    cdf = np.zeros((p.shape[0], n + 1), dtype=np.int64)
    np.cumsum(freq, axis=1, out=cdf[:, 1:])
    return cdf[0] if squeeze else cdf


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK32
        self._cache = 0
        self._cache_size = 1
        self._out = bytearray()
        self._finished = False

    def _shift_low(self):
        low = self.low
        if low < 0xFF000000 or low > _MASK32:
            carry = low >> 32
            byte = self._cache
            while True:
                self._out.append((byte + carry) & 0xFF)
                byte = 0xFF
                self._cache_size -= 1
                if self._cache_size == 0:
                    break
            self._cache = (low >> 24) & 0xFF
        self._cache_size += 1
        self.low = (low << 8) & _MASK32

    def encode(self, start, freq):
        """Narrow to [start, start + freq) out of 2**16."""
        r = self.range >> PRECISION
        self.low += r * start
        self.range = r * freq
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def encode_symbol(self, symbol, cdf):
        self.encode(int(cdf[symbol]), int(cdf[symbol + 1] - cdf[symbol]))

    def encode_bits(self, value, nbits):
        """Uniformly code the low ``nbits`` of ``value`` (nbits may exceed 16)."""
        while nbits > 0:
            take = min(nbits, PRECISION)
            nbits -= take
            chunk = (value >> nbits) & ((1 << take) - 1)
            self.encode(chunk << (PRECISION - take), 1 << (PRECISION - take))

    def finish(self) -> bytes:
        if self._finished:
            return bytes(self._out[1:])
        hi = self.low + self.range
        for k in range(40, -1, -1):
            v = ((self.low + (1 << k) - 1) >> k) << k
            if v < hi:
                self.low = v
                break
        for _ in range(5):
            self._shift_low()
        self._finished = True
        out = self._out
        trimmed = 0
        while out and out[-1] == 0 and trimmed < 5:
            out.pop()
            trimmed += 1
        # The first byte is the never-carried top byte of a value < 2**32, always 0.
        return bytes(out[1:])


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = bytes(data)
        self.pos = 0
        self.range = _MASK32
        self.code = 0
        self.symbols = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next_byte()
        self._r = 0

    def _next_byte(self):
        pos = self.pos
        self.pos += 1
        if pos < len(self.data):
            return self.data[pos]
        if pos >= len(self.data) + _OVERREAD_LIMIT:
            raise DecodeError("range-coded stream exhausted", self.symbols)
        return 0

    def target(self):
        self._r = self.range >> PRECISION
        v = self.code // self._r
        if v >= TOTAL:
            raise DecodeError("corrupt range-coded stream", self.symbols)
        return v

    def consume(self, start, freq):
        self.code -= self._r * start
        self.range = self._r * freq
        self.symbols += 1
        while self.range < _TOP:
            self.code = ((self.code << 8) | self._next_byte()) & _MASK32
            self.range <<= 8

    def decode_symbol(self, cdf):
        v = self.target()
        s = int(np.searchsorted(cdf, v, side="right")) - 1
        if not 0 <= s < len(cdf) - 1:
            raise DecodeError("decoded value outside the CDF table", self.symbols)
        self.consume(int(cdf[s]), int(cdf[s + 1] - cdf[s]))
        return s

    def decode_bits(self, nbits):
        value = 0
        while nbits > 0:
            take = min(nbits, PRECISION)
            nbits -= take
            shift = PRECISION - take
            chunk = self.target() >> shift
            self.consume(chunk << shift, 1 << shift)
            value = (value << take) | chunk
        return value


def _tables_for(cdfs, indexes, n):
    if isinstance(cdfs, np.ndarray) and cdfs.ndim == 1:
        return [cdfs] * n
    if indexes is None:
        if len(cdfs) != n:
            raise ValueError("need one CDF per symbol or an index array")
        return list(cdfs)
    return [cdfs[i] for i in indexes]


def range_encode(symbols, cdfs, indexes=None) -> bytes:
    """Code ``symbols`` where symbol k uses ``cdfs[indexes[k]]`` (or one shared table)."""
    symbols = [int(s) for s in symbols]
    tables = _tables_for(cdfs, indexes, len(symbols))
    enc = RangeEncoder()
    for s, cdf in zip(symbols, tables):
        if not 0 <= s < len(cdf) - 1:
            raise ValueError(f"symbol {s} outside table support [0, {len(cdf) - 1})")
        enc.encode_symbol(s, cdf)
    return enc.finish()


def range_decode(data: bytes, cdfs, count, indexes=None) -> list:
    tables = _tables_for(cdfs, indexes, count)
    dec = RangeDecoder(data)
    return [dec.decode_symbol(cdf) for cdf in tables]


def ideal_bits(symbols, cdfs, indexes=None) -> float:
    """Sum of -log2 of the quantised symbol probabilities."""
    symbols = [int(s) for s in symbols]
    tables = _tables_for(cdfs, indexes, len(symbols))
    return float(sum(-np.log2((cdf[s + 1] - cdf[s]) / TOTAL) for s, cdf in zip(symbols, tables)))

"""Byte-oriented rANS coder driven by 16-bit cumulative frequency tables.

The state is a 32-bit integer kept in ``[2**23, 2**31)`` between symbols
and renormalised one byte at a time. The encoder runs over the symbols in
reverse so the decoder can consume them front to back; the payload is the
4-byte little-endian final state followed by the emitted bytes.
"""

from __future__ import annotations

from array import array
from typing import Sequence

import numpy as np

from .errors import CorruptionError, DomainError, ShapeError
from .gaussian import PRECISION, CdfTable

RANS_L = 1 << 23
_MASK = (1 << PRECISION) - 1
FLUSH_BYTES = 4


class RansEncoder:
    """Encoder state; symbols must be pushed in reverse decoding order."""

    def __init__(self):
        self.state = RANS_L
        self._out = bytearray()

    def put(self, start: int, freq: int) -> None:
        x = self.state
        x_max = ((RANS_L >> PRECISION) << 8) * freq
        while x >= x_max:
            self._out.append(x & 0xFF)
            x >>= 8
        self.state = ((x // freq) << PRECISION) + (x % freq) + start

    def flush(self) -> bytes:
        return self.state.to_bytes(4, "little") + bytes(reversed(self._out))


class RansDecoder:
    def __init__(self, payload: bytes):
        if len(payload) < FLUSH_BYTES:
            raise CorruptionError("rANS payload shorter than its state header")
        self._buf = payload
        self.pos = FLUSH_BYTES
        self.state = int.from_bytes(payload[:FLUSH_BYTES], "little")
        if self.state < RANS_L:
            raise CorruptionError("rANS initial state out of range")

    def peek(self) -> int:
        return self.state & _MASK

    def advance(self, start: int, freq: int) -> None:
        x = freq * (self.state >> PRECISION) + (self.state & _MASK) - start
        buf = self._buf
        while x < RANS_L:
            if self.pos >= len(buf):
                raise CorruptionError("rANS payload exhausted")
            x = (x << 8) | buf[self.pos]
            self.pos += 1
        self.state = x

    def finish(self) -> None:
        """Check that the stream ended exactly where the encoder started."""
        if self.state != RANS_L or self.pos != len(self._buf):
            raise CorruptionError("rANS stream desynchronised (payload/table mismatch)")


def _check(symbols: np.ndarray, tables: Sequence[CdfTable]) -> np.ndarray:
    symbols = np.asarray(symbols)
    if symbols.ndim < 1 or symbols.shape[0] != len(tables):
        raise ShapeError(f"{len(tables)} tables for {symbols.shape[0] if symbols.ndim else 0} channels")
    return symbols.reshape(len(tables), -1)


def rans_encode(symbols: np.ndarray, tables: Sequence[CdfTable]) -> bytes:
    """Encode channel ``c`` of ``symbols`` with ``tables[c]``, channel-major."""
    flat = _check(symbols, tables)
    for c, t in enumerate(tables):
        if flat.shape[1] and (flat[c].min() < 0 or flat[c].max() >= t.size):
            raise DomainError(f"channel {c} has symbols outside its {t.size}-symbol alphabet")
    enc = RansEncoder()
    for c in range(len(tables) - 1, -1, -1):
        cdf = tables[c].cdf.tolist()
        for s in reversed(flat[c].tolist()):
            enc.put(cdf[s], cdf[s + 1] - cdf[s])
    return enc.flush()


def _slot_lookup(t: CdfTable) -> array:
    return array("H", np.repeat(np.arange(t.size, dtype=np.uint16), t.freq).tobytes())


def rans_decode(payload: bytes, tables: Sequence[CdfTable], shape) -> np.ndarray:
    """Invert :func:`rans_encode`; ``shape[0]`` must equal ``len(tables)``."""
    shape = tuple(int(d) for d in shape)
    if not shape or shape[0] != len(tables):
        raise ShapeError(f"{len(tables)} tables for shape {shape}")
    per_channel = int(np.prod(shape[1:], dtype=np.int64))
    dec = RansDecoder(bytes(payload))
    out = np.empty((len(tables), per_channel), dtype=np.int64)
    for c, t in enumerate(tables):
        cdf = t.cdf.tolist()
        lookup = _slot_lookup(t)
        row = []
        for _ in range(per_channel):
            s = lookup[dec.peek()]
            dec.advance(cdf[s], cdf[s + 1] - cdf[s])
            row.append(s)
        out[c] = row
    dec.finish()
    return out.reshape(shape)

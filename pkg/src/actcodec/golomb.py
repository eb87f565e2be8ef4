"""Exponential-Golomb codes and the symmetric variant used for activations.

Symmetric exp-Golomb (SymEG) codes a symbol relative to a reference: the
signed residual ``res = x - x_ref`` is folded onto the naturals
(``2*res`` for ``res >= 0``, ``2*|res| + 1`` otherwise) and the result is
written as an order-0 exp-Golomb codeword, so ``x == x_ref`` costs one bit.

Bits are packed MSB-first and the final byte is zero-padded.

Two code paths are provided. The scalar functions operate on a
:class:`BitWriter`/:class:`BitReader` one codeword at a time. The
``*_tensor`` functions code whole tensors with numpy and produce identical
bit streams.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import CorruptionError, DomainError

# longest zero run accepted by the decoders; real streams stay far below
MAX_PREFIX = 40


@dataclass(frozen=True)
class BitString:
    """An MSB-first packed bit sequence of ``nbits`` bits."""

    data: bytes
    nbits: int

    def __post_init__(self):
        if not 0 <= self.nbits <= 8 * len(self.data) or len(self.data) != (self.nbits + 7) // 8:
            raise ValueError(f"{len(self.data)} bytes cannot hold exactly {self.nbits} bits")

    def __len__(self) -> int:
        return self.nbits

    def __str__(self) -> str:
        bits = np.unpackbits(np.frombuffer(self.data, np.uint8))[: self.nbits]
        return "".join("1" if b else "0" for b in bits)

    def __add__(self, other: "BitString") -> "BitString":
        w = BitWriter()
        w.extend(self)
        w.extend(other)
        return w.getvalue()

    @classmethod
    def from_str(cls, s: str) -> "BitString":
        bits = np.array([c == "1" for c in s if c in "01"], dtype=np.uint8)
        return cls(np.packbits(bits).tobytes(), len(bits))


class BitWriter:
    def __init__(self):
        self._acc = 0
        self._n = 0

    def write(self, value: int, nbits: int) -> None:
        if nbits < 0 or value >> nbits:
            raise ValueError(f"{value} does not fit in {nbits} bits")
        self._acc = (self._acc << nbits) | value
        self._n += nbits

    def extend(self, bits: BitString) -> None:
        self.write(int.from_bytes(bits.data, "big") >> (8 * len(bits.data) - bits.nbits), bits.nbits)

    def __len__(self) -> int:
        return self._n

    def getvalue(self) -> BitString:
        nbytes = (self._n + 7) // 8
        return BitString((self._acc << (8 * nbytes - self._n)).to_bytes(nbytes, "big"), self._n)


class BitReader:
    """Cursor over a :class:`BitString` (or raw bytes, all bits valid)."""

    def __init__(self, bits):
        if isinstance(bits, (bytes, bytearray)):
            bits = BitString(bytes(bits), 8 * len(bits))
        self._data = bits.data
        self.nbits = bits.nbits
        self.pos = 0

    @property
    def remaining(self) -> int:
        return self.nbits - self.pos

    def read_bit(self) -> int:
        if self.pos >= self.nbits:
            raise CorruptionError("bit stream exhausted")
        b = (self._data[self.pos >> 3] >> (7 - (self.pos & 7))) & 1
        self.pos += 1
        return b

    def read(self, nbits: int) -> int:
        if nbits > self.remaining:
            raise CorruptionError("bit stream exhausted")
        v = 0
        for _ in range(nbits):
            v = (v << 1) | self.read_bit()
        return v

    def count_zeros(self) -> int:
        """Consume zeros up to (not including) the next 1 and return how many."""
        n = 0
        while True:
            if self.pos >= self.nbits:
                raise CorruptionError("bit stream exhausted before a terminating 1")
            if (self._data[self.pos >> 3] >> (7 - (self.pos & 7))) & 1:
                return n
            self.pos += 1
            n += 1
            if n > MAX_PREFIX:
                raise CorruptionError("exp-Golomb prefix too long")


# -- scalar codewords -------------------------------------------------------

def eg_encode(x: int, k: int = 0) -> BitString:
    w = BitWriter()
    eg_write(w, x, k)
    return w.getvalue()


def eg_write(w: BitWriter, x: int, k: int = 0) -> None:
    if x < 0 or k < 0:
        raise DomainError("exp-Golomb codes non-negative integers with order k >= 0")
    v = x + (1 << k)
    n = v.bit_length()
    w.write(0, n - 1 - k)
    w.write(v, n)


def eg_decode(r: BitReader, k: int = 0) -> int:
    lz = r.count_zeros()
    return r.read(lz + k + 1) - (1 << k)


def eg_length(x: int, k: int = 0) -> int:
    return 2 * (x + (1 << k)).bit_length() - 1 - k


def symeg_write(w: BitWriter, x: int, x_ref: int) -> int:
    res = x - x_ref
    z = 2 * abs(res) + 1 if res < 0 else 2 * abs(res)
    code = z + 1
    n = code.bit_length()
    w.write(0, n - 1)
    w.write(code, n)
    return 2 * n - 1


def symeg_encode(x: int, x_ref: int) -> BitString:
    if x < 0 or x_ref < 0:
        raise DomainError("SymEG codes unsigned symbols")
    w = BitWriter()
    symeg_write(w, x, x_ref)
    return w.getvalue()


def symeg_decode(r: BitReader, x_ref: int) -> int:
    if isinstance(r, BitString):
        r = BitReader(r)
    lz = r.count_zeros()
    z = r.read(lz + 1) - 1
    res = z // 2 if z % 2 == 0 else -((z - 1) // 2)
    x = res + x_ref
    if x < 0:
        raise CorruptionError(f"decoded negative symbol {x}")
    return x


def symeg_length(x: int, x_ref: int) -> int:
    """Codeword length in bits, in closed form.

    ``x == x_ref`` belongs to the first branch so that the result always
    matches the encoder (one bit for a zero residual).
    """
    if x >= x_ref:
        return 2 * ((2 * (x - x_ref) + 1).bit_length() - 1) + 1
    return 2 * ((2 * (x_ref - x) + 2).bit_length() - 1) + 1


# -- reference selection ----------------------------------------------------

class ReferenceSelector(str, Enum):
    MEAN = "mean"
    MODE = "mode"
    MEDIAN = "median"

    @property
    def code(self) -> int:
        return list(ReferenceSelector).index(self)

    @classmethod
    def from_code(cls, code: int) -> "ReferenceSelector":
        try:
            return list(cls)[code]
        except IndexError:
            raise DomainError(f"unknown reference selector code {code}") from None


def select_reference(symbols: np.ndarray, selector="median") -> int:
    """Per-slice reference number.

    mean is rounded half away from zero, mode ties go to the smallest
    symbol, and an even-length median takes the lower middle element.
    """
    selector = ReferenceSelector(selector)
    s = np.asarray(symbols).reshape(-1)
    if s.size == 0:
        raise DomainError("cannot select a reference for an empty slice")
    if s.min() < 0:
        raise DomainError("symbols must be non-negative")
    if selector is ReferenceSelector.MEAN:
        total, n = int(s.sum(dtype=np.int64)), s.size
        return (2 * total + n) // (2 * n)
    if selector is ReferenceSelector.MODE:
        return int(np.argmax(np.bincount(s.astype(np.int64))))
    return int(np.partition(s, (s.size - 1) // 2)[(s.size - 1) // 2])


# -- vectorized streams -----------------------------------------------------

def _bit_length(v: np.ndarray) -> np.ndarray:
    """Bit length of positive integers below 2**53."""
    return np.frexp(v.astype(np.float64))[1].astype(np.int64)


def _floor_log2(v: np.ndarray) -> np.ndarray:
    return np.frexp(np.asarray(v, dtype=np.float64))[1].astype(np.int64) - 1


def pack_codewords(values: np.ndarray, lengths: np.ndarray, chunk: int = 1 << 20) -> BitString:
    """Concatenate ``values[i]`` written in ``lengths[i]`` bits, MSB-first."""
    values = np.asarray(values, dtype=np.uint64).reshape(-1)
    lengths = np.asarray(lengths, dtype=np.int64).reshape(-1)
    total = int(lengths.sum())
    bits = np.empty(total, dtype=np.uint8)
    off = 0
    for i in range(0, values.size, chunk):
        v, ln = values[i:i + chunk], lengths[i:i + chunk]
        n = int(ln.sum())
        starts = np.cumsum(ln) - ln
        pos = np.arange(n, dtype=np.int64) - np.repeat(starts, ln)
        shift = (np.repeat(ln, ln) - 1 - pos).astype(np.uint64)
        bits[off:off + n] = (np.repeat(v, ln) >> shift) & np.uint64(1)
        off += n
    return BitString(np.packbits(bits).tobytes(), total)


def unpack_expgolomb(bits, count: int, k: int = 0, window: int = 1 << 22):
    """Decode ``count`` order-``k`` exp-Golomb codewords from the front of ``bits``.

    Returns ``(values, consumed_bits)`` where ``values`` holds ``x + 2**k``,
    i.e. the codeword integers without the zero prefix.
    """
    if isinstance(bits, (bytes, bytearray)):
        bits = BitString(bytes(bits), 8 * len(bits))
    nbits = bits.nbits
    arr = np.unpackbits(np.frombuffer(bits.data, np.uint8))[:nbits]
    if count == 0:
        return np.zeros(0, np.uint64), 0
    sentinel = nbits + MAX_PREFIX + 2

    def first_one(lo, hi):
        # first 1 at or after each p in [lo, hi); a prefix longer than
        # MAX_PREFIX is invalid anyway, so look ahead no further than that
        end = min(hi + MAX_PREFIX + 1, nbits)
        idx = np.where(arr[lo:end] == 1, np.arange(lo, end, dtype=np.int64), sentinel)
        return np.minimum.accumulate(idx[::-1])[::-1][:hi - lo]

    # Codeword starts are found by following p -> p + 2*(f(p) - p) + k + 1,
    # with f(p) the first 1 at or after p, evaluated one window at a time.
    starts = np.empty(count, dtype=np.int64)
    f = np.empty(count, dtype=np.int64)
    n, p = 0, 0
    while n < count:
        if p >= nbits:
            raise CorruptionError(f"bit stream exhausted after {n} of {count} codewords")
        w0, w1 = p, min(p + window, nbits)
        first = first_one(w0, w1)
        nxt = memoryview(2 * first - np.arange(w0, w1, dtype=np.int64) + (k + 1))
        chain = []
        while n < count and w0 <= p < w1:
            chain.append(p)
            p = nxt[p - w0]
            n += 1
        idx = np.asarray(chain, dtype=np.int64)
        starts[n - idx.size:n] = idx
        f[n - idx.size:n] = first[idx - w0]
    lz = f - starts
    if np.any(lz > MAX_PREFIX):
        raise CorruptionError("exp-Golomb prefix too long")
    lengths = lz + k + 1
    end = int(f[-1] + lengths[-1])
    if end > nbits:
        raise CorruptionError("last codeword runs past the end of the stream")
    padded = np.concatenate([arr, np.zeros(int(lengths.max()), np.uint8)])
    vals = np.zeros(count, dtype=np.uint64)
    for j in range(int(lengths.max())):
        live = j < lengths
        b = padded[np.where(live, f + j, 0)].astype(np.uint64)
        vals = np.where(live, (vals << np.uint64(1)) | b, vals)
    return vals, end


def _check_padding(bits: BitString, consumed: int) -> None:
    if bits.nbits - consumed >= 8:
        raise CorruptionError(f"{bits.nbits - consumed} unused bits after the last codeword")
    arr = np.unpackbits(np.frombuffer(bits.data, np.uint8))[consumed:bits.nbits]
    if arr.any():
        raise CorruptionError("non-zero padding bits")


def _as_bits(payload) -> BitString:
    if isinstance(payload, BitString):
        return payload
    return BitString(bytes(payload), 8 * len(payload))


def symeg_codewords(symbols: np.ndarray, refs: np.ndarray):
    """``(codes, lengths)`` of every symbol; ``refs`` broadcasts against ``symbols``."""
    res = np.asarray(symbols, dtype=np.int64) - np.asarray(refs, dtype=np.int64)
    z = np.where(res < 0, -2 * res + 1, 2 * res)
    code = (z + 1).astype(np.uint64)
    return code, 2 * _bit_length(code) - 1


def symeg_lengths(symbols: np.ndarray, refs: np.ndarray) -> np.ndarray:
    """Closed-form codeword lengths (see :func:`symeg_length`), vectorized."""
    d = np.asarray(symbols, dtype=np.int64) - np.asarray(refs, dtype=np.int64)
    return np.where(d >= 0, 2 * _floor_log2(2 * d + 1) + 1, 2 * _floor_log2(-2 * d + 2) + 1)


def channel_references(symbols: np.ndarray, selector="median") -> np.ndarray:
    return np.array([select_reference(ch, selector) for ch in symbols], dtype=np.uint32)


def symeg_encode_tensor(symbols: np.ndarray, selector="median"):
    """Code a ``C x H x W`` symbol tensor channel by channel.

    Returns the payload and the per-channel references needed to decode it.
    """
    symbols = np.asarray(symbols)
    refs = channel_references(symbols, selector)
    code, lengths = symeg_codewords(symbols, refs.reshape((-1,) + (1,) * (symbols.ndim - 1)))
    return pack_codewords(code, lengths), refs


def symeg_decode_tensor(payload, refs: np.ndarray, shape) -> np.ndarray:
    bits = _as_bits(payload)
    refs = np.asarray(refs, dtype=np.int64)
    count = int(np.prod(shape))
    codes, used = unpack_expgolomb(bits, count, 0)
    _check_padding(bits, used)
    z = codes.astype(np.int64) - 1
    res = np.where(z % 2 == 0, z // 2, -((z - 1) // 2))
    x = res.reshape(shape) + refs.reshape((-1,) + (1,) * (len(shape) - 1))
    if x.min() < 0:
        raise CorruptionError("decoded a negative symbol")
    return x


def eg_encode_tensor(symbols: np.ndarray, k: int = 4) -> BitString:
    v = np.asarray(symbols, dtype=np.uint64).reshape(-1) + np.uint64(1 << k)
    return pack_codewords(v, 2 * _bit_length(v) - 1 - k)


def eg_decode_tensor(payload, shape, k: int = 4) -> np.ndarray:
    bits = _as_bits(payload)
    codes, used = unpack_expgolomb(bits, int(np.prod(shape)), k)
    _check_padding(bits, used)
    return (codes.astype(np.int64) - (1 << k)).reshape(shape)


def eg_lengths(symbols: np.ndarray, k: int = 4) -> np.ndarray:
    return 2 * _floor_log2(np.asarray(symbols, dtype=np.int64) + (1 << k)) - k + 1

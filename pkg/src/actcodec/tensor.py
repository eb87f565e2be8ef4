"""Tensors and the ATNS binary tensor file.

A tensor is a plain C-contiguous ``numpy.ndarray`` of shape ``(C, H, W)``
whose dtype is one of the five element types below. Weight tensors
(``O x I x kh x kw``) use the same file format with ``ndim = 4``.

File layout, all little-endian::

    magic    4 bytes  b"ATNS"
    version  u8       1 for 3-D tensors, 2 when ndim = 4
    dtype    u8       0=f32 1=u8 2=u16 3=i8 4=i32
    ndim     u8
    dims     ndim x u32
    payload  row-major element bytes
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import CorruptionError, FormatError, ShapeError, UnsupportedError

MAGIC = b"ATNS"

DTYPES: dict[int, np.dtype] = {
    0: np.dtype("<f4"),
    1: np.dtype("u1"),
    2: np.dtype("<u2"),
    3: np.dtype("i1"),
    4: np.dtype("<i4"),
}
_CODES = {(dt.kind, dt.itemsize): code for code, dt in DTYPES.items()}
_VERSION_FOR_NDIM = {3: 1, 4: 2}


def header_size(ndim: int = 3) -> int:
    return len(MAGIC) + 3 + 4 * ndim


def dtype_code(dtype) -> int:
    dt = np.dtype(dtype)
    try:
        return _CODES[(dt.kind, dt.itemsize)]
    except KeyError:
        raise UnsupportedError(f"unsupported element type {np.dtype(dtype)}") from None


def check_tensor(t: np.ndarray, ndim: int = 3) -> np.ndarray:
    """Validate that ``t`` is a well-formed tensor and return it."""
    if not isinstance(t, np.ndarray):
        raise TypeError(f"expected numpy.ndarray, got {type(t).__name__}")
    if t.ndim != ndim:
        raise ShapeError(f"expected {ndim}-D tensor, got shape {t.shape}")
    if any(d <= 0 for d in t.shape):
        raise ShapeError(f"all dims must be positive, got {t.shape}")
    dtype_code(t.dtype)
    return t


def tensor_nbytes(shape, itemsize: int = 4) -> int:
    """Raw payload size of a tensor with ``shape`` (default: 32-bit floats)."""
    n = 1
    for d in shape:
        n *= int(d)
    return n * itemsize


def encode_array(t: np.ndarray) -> bytes:
    if t.ndim not in _VERSION_FOR_NDIM:
        raise ShapeError(f"only 3-D and 4-D arrays can be stored, got {t.ndim}-D")
    check_tensor(t, t.ndim)
    code = dtype_code(t.dtype)
    if any(d > 0xFFFFFFFF for d in t.shape):
        raise ShapeError(f"dimension too large for u32: {t.shape}")
    header = MAGIC + struct.pack(
        f"<BBB{t.ndim}I", _VERSION_FOR_NDIM[t.ndim], code, t.ndim, *t.shape
    )
    payload = np.ascontiguousarray(t, dtype=DTYPES[code]).tobytes()
    return header + payload


def decode_array(buf: bytes) -> np.ndarray:
    if len(buf) < len(MAGIC) or buf[:4] != MAGIC:
        raise FormatError("not an ATNS tensor file (bad magic)")
    if len(buf) < 7:
        raise CorruptionError("truncated tensor header")
    version, code, ndim = buf[4], buf[5], buf[6]
    if version not in (1, 2):
        raise UnsupportedError(f"unsupported tensor file version {version}")
    if code not in DTYPES:
        raise UnsupportedError(f"unknown dtype code {code}")
    if ndim != 3 and not (version == 2 and ndim == 4):
        raise UnsupportedError(f"ndim {ndim} not supported by version {version}")
    hsize = header_size(ndim)
    if len(buf) < hsize:
        raise CorruptionError("truncated tensor header")
    dims = struct.unpack_from(f"<{ndim}I", buf, 7)
    if any(d == 0 for d in dims):
        raise CorruptionError(f"zero dimension in header: {dims}")
    dt = DTYPES[code]
    need = tensor_nbytes(dims, dt.itemsize)
    if len(buf) - hsize < need:
        raise CorruptionError(f"payload truncated: need {need} bytes, have {len(buf) - hsize}")
    if len(buf) - hsize > need:
        raise CorruptionError(f"{len(buf) - hsize - need} trailing bytes after payload")
    arr = np.frombuffer(buf, dtype=dt, count=need // dt.itemsize, offset=hsize)
    # native byte order; tensors are immutable once read
    out = arr.astype(dt.newbyteorder("="), copy=True).reshape(dims)
    out.flags.writeable = False
    return out


def write_array(t: np.ndarray, path: str | os.PathLike) -> int:
    data = encode_array(t)
    with open(path, "wb") as f:
        f.write(data)
    return len(data)


def read_array(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_array(f.read())


def write_tensor(t: np.ndarray, path: str | os.PathLike) -> int:
    """Write a ``C x H x W`` tensor, returning the number of bytes written."""
    check_tensor(t)
    return write_array(t, path)


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    t = read_array(path)
    if t.ndim != 3:
        raise UnsupportedError(f"expected a 3-D tensor file, got {t.ndim}-D")
    return t

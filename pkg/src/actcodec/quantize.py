"""Uniform activation quantization and symmetric int8 quantization.

Rounding is half away from zero everywhere. Arithmetic is carried out in
float64 on float32 inputs and the results are rounded once at the end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateScaleError, DomainError

MIN_BITS = 2
MAX_BITS = 16
INT8_MAX = 127


def round_half_away(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def symbol_dtype(q: int) -> np.dtype:
    return np.dtype(np.uint8) if q <= 8 else np.dtype(np.uint16)


def check_bits(q: int) -> int:
    if not isinstance(q, (int, np.integer)) or not MIN_BITS <= q <= MAX_BITS:
        raise DomainError(f"bit depth must be an integer in [{MIN_BITS}, {MAX_BITS}], got {q!r}")
    return int(q)


@dataclass(frozen=True)
class QuantParams:
    """Tensor-wide range and bit depth of a uniform quantizer."""

    y_min: float
    y_max: float
    q: int

    def __post_init__(self):
        check_bits(self.q)
        if not (np.isfinite(self.y_min) and np.isfinite(self.y_max)):
            raise DomainError("quantizer range must be finite")
        if self.y_min > self.y_max:
            raise DomainError(f"y_min {self.y_min} > y_max {self.y_max}")

    @property
    def levels(self) -> int:
        return (1 << self.q) - 1

    @property
    def step(self) -> float:
        return (self.y_max - self.y_min) / self.levels


def quantize_uniform(y: np.ndarray, q: int) -> tuple[np.ndarray, QuantParams]:
    """Map ``y`` onto the integers ``0 .. 2**q - 1`` over its own min/max range.

    A constant tensor quantizes to all zeros.
    """
    q = check_bits(q)
    y = np.asarray(y, dtype=np.float32)
    if y.size == 0:
        raise DomainError("cannot quantize an empty tensor")
    if not np.all(np.isfinite(y)):
        raise DomainError("tensor contains non-finite values")
    y_min, y_max = float(y.min()), float(y.max())
    params = QuantParams(y_min, y_max, q)
    if y_max == y_min:
        return np.zeros(y.shape, dtype=symbol_dtype(q)), params
    v = (y.astype(np.float64) - y_min) / (y_max - y_min) * params.levels
    sym = np.clip(np.floor(v + 0.5), 0, params.levels)
    return sym.astype(symbol_dtype(q)), params


def dequantize_uniform(symbols: np.ndarray, params: QuantParams) -> np.ndarray:
    symbols = np.asarray(symbols)
    if symbols.size and (symbols.min() < 0 or symbols.max() > params.levels):
        raise DomainError(f"symbols outside [0, {params.levels}]")
    if params.y_max == params.y_min:
        return np.full(symbols.shape, params.y_min, dtype=np.float32)
    s = symbols.astype(np.float64)
    out = s * (params.y_max - params.y_min) / params.levels + params.y_min
    return out.astype(np.float32)


@dataclass(frozen=True)
class Int8Scales:
    s_input: float
    s_weight: np.ndarray

    def __post_init__(self):
        sw = np.asarray(self.s_weight, dtype=np.float32).reshape(-1)
        object.__setattr__(self, "s_weight", sw)
        vals = np.append(sw, np.float32(self.s_input))
        if not np.all(np.isfinite(vals)) or not np.all(vals > 0):
            raise DomainError("int8 scales must be positive and finite")


def _max_abs_scale(m: float, what: str) -> float:
    if not m > 0:
        raise DegenerateScaleError(f"{what} has zero max magnitude")
    return float(np.float32(INT8_MAX / m))


def int8_input_scale(x: np.ndarray) -> float:
    return _max_abs_scale(float(np.max(np.abs(x))), "input tensor")


def int8_weight_scales(w: np.ndarray) -> np.ndarray:
    """Per-output-channel scales ``127 / max|w_o|`` for an ``O x ...`` weight."""
    w = np.asarray(w, dtype=np.float32)
    m = np.abs(w.reshape(w.shape[0], -1)).max(axis=1)
    return np.array([_max_abs_scale(float(v), f"output channel {o}") for o, v in enumerate(m)],
                    dtype=np.float32)


def quantize_int8(x: np.ndarray, scale) -> np.ndarray:
    """``clamp(round(scale * x), -127, 127)``.

    ``scale`` is a scalar or a vector broadcast along the leading axis.
    """
    x = np.asarray(x, dtype=np.float32)
    s = np.asarray(scale, dtype=np.float32)
    if not np.all(s > 0):
        raise DomainError("int8 scale must be positive")
    if s.ndim == 1:
        s = s.reshape((-1,) + (1,) * (x.ndim - 1))
    v = round_half_away(s.astype(np.float64) * x.astype(np.float64))
    return np.clip(v, -INT8_MAX, INT8_MAX).astype(np.int8)

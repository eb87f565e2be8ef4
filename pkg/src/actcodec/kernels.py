"""Reference convolution kernels and n:m weight sparsification."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, ShapeError
from .quantize import INT8_MAX, Int8Scales, int8_input_scale, int8_weight_scales, quantize_int8

ACC_LIMIT = 2 ** 31 - 1


@dataclass(frozen=True)
class ConvLayer:
    weights: np.ndarray
    bias: Optional[np.ndarray] = None
    stride: int = 1
    padding: int = 0
    relu: bool = False

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float32)
        if w.ndim != 4 or 0 in w.shape:
            raise ShapeError(f"weights must be O x I x kh x kw, got {w.shape}")
        b = np.zeros(w.shape[0], np.float32) if self.bias is None else np.asarray(self.bias, np.float32).reshape(-1)
        if b.shape != (w.shape[0],):
            raise ShapeError(f"bias must have length {w.shape[0]}, got {b.shape}")
        if self.stride < 1 or self.padding < 0:
            raise ConfigError("stride must be >= 1 and padding >= 0")
        fan_in = w.shape[1] * w.shape[2] * w.shape[3]
        if INT8_MAX * INT8_MAX * fan_in > ACC_LIMIT:
            raise ConfigError(f"fan-in {fan_in} could overflow a 32-bit int8 accumulator")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    def output_shape(self, in_shape) -> tuple[int, int, int]:
        _, h, w = in_shape
        kh, kw = self.weights.shape[2:]
        ho = (h + 2 * self.padding - kh) // self.stride + 1
        wo = (w + 2 * self.padding - kw) // self.stride + 1
        return self.out_channels, ho, wo

    def macs(self, in_shape) -> int:
        o, ho, wo = self.output_shape(in_shape)
        return o * ho * wo * int(np.prod(self.weights.shape[1:]))


def _windows(layer: ConvLayer, x: np.ndarray) -> np.ndarray:
    if x.ndim != 3 or x.shape[0] != layer.in_channels:
        raise ShapeError(f"layer expects {layer.in_channels} input channels, got shape {x.shape}")
    kh, kw = layer.weights.shape[2:]
    p = layer.padding
    if p:
        x = np.pad(x, ((0, 0), (p, p), (p, p)))
    if x.shape[1] < kh or x.shape[2] < kw:
        raise ShapeError(f"input {x.shape[1:]} smaller than kernel {(kh, kw)}")
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    return win[:, ::layer.stride, ::layer.stride]


def _finish(layer: ConvLayer, y: np.ndarray) -> np.ndarray:
    y = y + layer.bias.astype(np.float64)[:, None, None]
    if layer.relu:
        y = np.maximum(y, 0.0)
    return y.astype(np.float32)


def conv_f32(layer: ConvLayer, x: np.ndarray) -> np.ndarray:
    """Cross-correlation plus bias (and ReLU when flagged), accumulated in float64."""
    win = _windows(layer, np.asarray(x, dtype=np.float32).astype(np.float64))
    y = np.einsum("oikl,ihwkl->ohw", layer.weights.astype(np.float64), win, optimize=True)
    return _finish(layer, y)


def int8_scales(layer: ConvLayer, x: np.ndarray) -> Int8Scales:
    return Int8Scales(int8_input_scale(x), int8_weight_scales(layer.weights))


def conv_int8(layer: ConvLayer, x: np.ndarray, scales: Optional[Int8Scales] = None) -> np.ndarray:
    """Convolution on int8 operands with 32-bit accumulation.

    Inputs use one tensor-wide scale and weights one scale per output
    channel; the integer result is divided by both scales before the bias.
    """
    x = np.asarray(x, dtype=np.float32)
    if scales is None:
        scales = int8_scales(layer, x)
    if scales.s_weight.size != layer.out_channels:
        raise ShapeError(f"{scales.s_weight.size} weight scales for {layer.out_channels} channels")
    xq = quantize_int8(x, scales.s_input).astype(np.int32)
    wq = quantize_int8(layer.weights, scales.s_weight).astype(np.int32)
    acc = np.einsum("oikl,ihwkl->ohw", wq, _windows(layer, xq), dtype=np.int32)
    denom = scales.s_weight.astype(np.float64) * np.float64(scales.s_input)
    return _finish(layer, acc / denom[:, None, None])


@dataclass(frozen=True)
class SparseMask:
    mask: np.ndarray
    n: int
    m: int

    def satisfied(self) -> bool:
        flat = self.mask.reshape(self.mask.shape[0], -1)
        g = flat.shape[1] // self.m
        groups = flat[:, : g * self.m].reshape(flat.shape[0], g, self.m)
        return bool(np.all(groups.sum(axis=-1) <= self.n))


def apply_nm_sparsity(weights: np.ndarray, n: int = 2, m: int = 4) -> tuple[np.ndarray, SparseMask]:
    """Keep the ``n`` largest-magnitude weights in every run of ``m``.

    Runs are taken along each filter's flattened ``I * kh * kw`` axis.
    Ties keep the lower index. A trailing partial run stays dense.
    """
    if not (0 <= n <= m and m >= 1):
        raise ConfigError(f"need 0 <= n <= m and m >= 1, got {n}:{m}")
    w = np.asarray(weights, dtype=np.float32)
    flat = w.reshape(w.shape[0], -1)
    g = flat.shape[1] // m
    mask = np.ones(flat.shape, dtype=bool)
    groups = np.abs(flat[:, : g * m]).reshape(flat.shape[0], g, m)
    order = np.argsort(-groups, axis=-1, kind="stable")
    keep = np.zeros(groups.shape, dtype=bool)
    np.put_along_axis(keep, order[..., :n], True, axis=-1)
    mask[:, : g * m] = keep.reshape(flat.shape[0], g * m)
    mask = mask.reshape(w.shape)
    return np.where(mask, w, np.float32(0)), SparseMask(mask, n, m)

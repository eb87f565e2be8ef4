"""Transform -> quantize -> entropy-code pipeline, its container, and accounting.

Container layout (little-endian)::

    magic       4s   b"ACTC"
    version     u8   1
    coder       u8   0=symeg 1=eg 2=rans
    q           u8   bit depth
    param       u8   reference selector (symeg), k (eg), 0 (rans)
    C, H, W     3 x u16
    y_min       f32
    y_max       f32
    overhead         symeg: C x u32 references
                     rans:  C x (f32 mu, f32 sigma)
    length      u64  payload byte count
    payload
    crc32       u32  of the payload

The fixed part is 34 bytes.
"""

from __future__ import annotations

import math
import os
import struct
import zlib
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from . import golomb, rans
from .errors import ConfigError, CorruptionError, DomainError, FormatError, ShapeError, UnsupportedError
from .gaussian import ChannelGaussian, estimate_bits_gaussian, model_tables
from .golomb import ReferenceSelector
from .quantize import MAX_BITS, MIN_BITS, QuantParams, dequantize_uniform, quantize_uniform
from .tensor import check_tensor, tensor_nbytes
from .transform import ChannelTransform

MAGIC = b"ACTC"
VERSION = 1
CODERS = ("symeg", "eg", "rans")
DEFAULT_K = 4

_PREFIX = struct.Struct("<4sBBBB3Hff")
_LENGTH = struct.Struct("<Q")
_CRC = struct.Struct("<I")
HEADER_BYTES = _PREFIX.size + _LENGTH.size + _CRC.size
MAX_DIM = 0xFFFF


@dataclass(frozen=True)
class PipelineConfig:
    coder: str = "rans"
    q: int = 8
    k: Optional[int] = None
    selector: Optional[str] = None
    transform: ChannelTransform = field(default_factory=ChannelTransform)
    gamma: float = 0.0

    def __post_init__(self):
        if self.coder not in CODERS:
            raise ConfigError(f"unknown coder {self.coder!r}; expected one of {CODERS}")
        if not isinstance(self.q, (int, np.integer)) or not MIN_BITS <= self.q <= MAX_BITS:
            raise ConfigError(f"q must be in [{MIN_BITS}, {MAX_BITS}], got {self.q!r}")
        if self.k is not None and self.coder != "eg":
            raise ConfigError("k only applies to the eg coder")
        if self.selector is not None and self.coder != "symeg":
            raise ConfigError("a reference selector only applies to the symeg coder")
        if self.coder == "eg":
            k = DEFAULT_K if self.k is None else self.k
            if not 0 <= k <= 15:
                raise ConfigError(f"k must be in [0, 15], got {k}")
            object.__setattr__(self, "k", int(k))
        if self.coder == "symeg":
            try:
                sel = ReferenceSelector(self.selector or "median")
            except ValueError:
                raise ConfigError(f"unknown reference selector {self.selector!r}") from None
            object.__setattr__(self, "selector", sel.value)
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise ConfigError("gamma must be finite and non-negative")

    @property
    def param(self) -> int:
        if self.coder == "symeg":
            return ReferenceSelector(self.selector).code
        if self.coder == "eg":
            return self.k
        return 0


@dataclass(frozen=True)
class CompressedActivation:
    coder: str
    q: int
    param: int
    shape: tuple
    y_min: float
    y_max: float
    payload: bytes
    refs: Optional[np.ndarray] = None
    model: Optional[ChannelGaussian] = None
    checksum: Optional[int] = None

    def __post_init__(self):
        if self.checksum is None:
            object.__setattr__(self, "checksum", zlib.crc32(self.payload))

    @property
    def quant_params(self) -> QuantParams:
        return QuantParams(self.y_min, self.y_max, self.q)

    @property
    def overhead_bytes(self) -> int:
        c = self.shape[0]
        return {"symeg": 4 * c, "eg": 0, "rans": 8 * c}[self.coder]

    def total_bytes(self) -> int:
        return HEADER_BYTES + self.overhead_bytes + len(self.payload)

    def _overhead(self) -> bytes:
        if self.coder == "symeg":
            return np.asarray(self.refs, dtype="<u4").tobytes()
        if self.coder == "rans":
            pairs = np.stack([self.model.mu, self.model.sigma], axis=1).astype("<f4")
            return pairs.tobytes()
        return b""

    def to_bytes(self) -> bytes:
        head = _PREFIX.pack(MAGIC, VERSION, CODERS.index(self.coder), self.q, self.param,
                            *self.shape, self.y_min, self.y_max)
        return b"".join([head, self._overhead(), _LENGTH.pack(len(self.payload)), self.payload,
                         _CRC.pack(self.checksum)])

    @classmethod
    def from_bytes(cls, buf: bytes) -> "CompressedActivation":
        if buf[:4] != MAGIC:
            raise FormatError("not an ACTC container (bad magic)")
        if len(buf) < _PREFIX.size:
            raise CorruptionError("truncated container header")
        _, version, coder_id, q, param, c, h, w, y_min, y_max = _PREFIX.unpack_from(buf)
        if version != VERSION:
            raise UnsupportedError(f"unsupported container version {version}")
        if coder_id >= len(CODERS):
            raise UnsupportedError(f"unknown coder id {coder_id}")
        if not MIN_BITS <= q <= MAX_BITS:
            raise CorruptionError(f"invalid bit depth {q}")
        coder = CODERS[coder_id]
        pos = _PREFIX.size
        refs = model = None
        if coder == "symeg":
            n = 4 * c
            if len(buf) < pos + n:
                raise CorruptionError("truncated overhead block")
            refs = np.frombuffer(buf, "<u4", c, pos).astype(np.uint32)
        elif coder == "rans":
            n = 8 * c
            if len(buf) < pos + n:
                raise CorruptionError("truncated overhead block")
            pairs = np.frombuffer(buf, "<f4", 2 * c, pos).reshape(c, 2)
            try:
                model = ChannelGaussian(pairs[:, 0], pairs[:, 1])
            except DomainError as e:
                raise CorruptionError(f"invalid Gaussian overhead: {e}") from None
        else:
            n = 0
        pos += n
        if len(buf) < pos + _LENGTH.size:
            raise CorruptionError("truncated container")
        (length,) = _LENGTH.unpack_from(buf, pos)
        pos += _LENGTH.size
        if len(buf) < pos + length + _CRC.size:
            raise CorruptionError("truncated payload")
        payload = bytes(buf[pos:pos + length])
        (crc,) = _CRC.unpack_from(buf, pos + length)
        if len(buf) != pos + length + _CRC.size:
            raise CorruptionError("trailing bytes after container")
        if zlib.crc32(payload) != crc:
            raise CorruptionError("payload checksum mismatch")
        return cls(coder, q, param, (c, h, w), y_min, y_max, payload, refs, model, crc)

    def save(self, path) -> int:
        data = self.to_bytes()
        with open(path, "wb") as f:
            f.write(data)
        return len(data)

    @classmethod
    def load(cls, path) -> "CompressedActivation":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


def _quantized(x: np.ndarray, cfg: PipelineConfig):
    x = check_tensor(np.asarray(x, dtype=np.float32))
    y = cfg.transform.apply_forward(x)
    return quantize_uniform(y, cfg.q)


def compress(x: np.ndarray, cfg: PipelineConfig) -> CompressedActivation:
    sym, qp = _quantized(x, cfg)
    if max(sym.shape) > MAX_DIM:
        raise ShapeError(f"container dims are limited to {MAX_DIM}, got {sym.shape}")
    refs = model = None
    if cfg.coder == "symeg":
        bits, refs = golomb.symeg_encode_tensor(sym, cfg.selector)
        payload = bits.data
    elif cfg.coder == "eg":
        payload = golomb.eg_encode_tensor(sym, cfg.k).data
    else:
        model = ChannelGaussian.from_symbols(sym)
        payload = rans.rans_encode(sym, model_tables(model, cfg.q))
    return CompressedActivation(cfg.coder, cfg.q, cfg.param, tuple(int(d) for d in sym.shape),
                                qp.y_min, qp.y_max, payload, refs, model)


def decode_symbols(c: CompressedActivation) -> np.ndarray:
    if zlib.crc32(c.payload) != c.checksum:
        raise CorruptionError("payload checksum mismatch")
    if c.coder == "symeg":
        sym = golomb.symeg_decode_tensor(c.payload, c.refs, c.shape)
    elif c.coder == "eg":
        sym = golomb.eg_decode_tensor(c.payload, c.shape, c.param)
    elif c.coder == "rans":
        sym = rans.rans_decode(c.payload, model_tables(c.model, c.q), c.shape)
    else:
        raise UnsupportedError(f"unknown coder {c.coder!r}")
    if sym.max() > (1 << c.q) - 1:
        raise CorruptionError("decoded symbol outside the quantizer range")
    return sym.astype(np.uint8 if c.q <= 8 else np.uint16)


def decompress(c: CompressedActivation, cfg: Optional[PipelineConfig] = None) -> np.ndarray:
    """Reconstruct the activation; only ``cfg.transform`` is used from ``cfg``.

    Coder parameters always come from the container itself.
    """
    transform = cfg.transform if cfg is not None else ChannelTransform()
    y = dequantize_uniform(decode_symbols(c), c.quant_params)
    return transform.apply_inverse(y)


@dataclass(frozen=True)
class PenaltyEstimate:
    total_bits: float
    elements: int
    normalized: float
    penalty: float

    @property
    def bits_per_element(self) -> float:
        return self.total_bits / self.elements


def estimate_penalty(x: np.ndarray, cfg: PipelineConfig) -> PenaltyEstimate:
    """Estimated coded size of ``x`` and the weighted activation penalty.

    The size is normalised by the spatial extent ``h * w`` only (batch of
    one, channels not averaged) and multiplied by ``cfg.gamma``.
    """
    sym, _ = _quantized(x, cfg)
    if cfg.coder == "symeg":
        refs = golomb.channel_references(sym, cfg.selector).reshape(-1, 1, 1)
        bits = float(golomb.symeg_lengths(sym, refs).sum())
    elif cfg.coder == "eg":
        bits = float(golomb.eg_lengths(sym, cfg.k).sum())
    else:
        bits = estimate_bits_gaussian(sym, ChannelGaussian.from_symbols(sym), cfg.q)
    _, h, w = sym.shape
    normalized = bits / (h * w)
    return PenaltyEstimate(bits, sym.size, normalized, cfg.gamma * normalized)


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def kv_line(**items) -> str:
    return " ".join(f"{k}={_fmt(v)}" for k, v in items.items())


@dataclass(frozen=True)
class LayerBandwidth:
    uncompressed: int
    compressed: int

    @property
    def ratio(self) -> float:
        return self.uncompressed / self.compressed


@dataclass(frozen=True)
class BandwidthReport:
    layers: tuple
    uncompressed: int
    compressed: int

    @property
    def ratio(self) -> float:
        return self.uncompressed / self.compressed

    def lines(self) -> list[str]:
        out = [kv_line(layer=i, uncompressed_bytes=l.uncompressed, compressed_bytes=l.compressed,
                       ratio=l.ratio) for i, l in enumerate(self.layers)]
        out.append(kv_line(layer="total", uncompressed_bytes=self.uncompressed,
                           compressed_bytes=self.compressed, ratio=self.ratio))
        return out

    def table(self) -> str:
        rows = ["layer\tuncompressed_bytes\tcompressed_bytes\tratio"]
        rows += [f"{i}\t{l.uncompressed}\t{l.compressed}\t{l.ratio:.4f}" for i, l in enumerate(self.layers)]
        rows.append(f"total\t{self.uncompressed}\t{self.compressed}\t{self.ratio:.4f}")
        return "\n".join(rows)


def bandwidth_report(x_list: Sequence, c_list: Sequence[CompressedActivation]) -> BandwidthReport:
    """Float32 activation bytes over compressed container bytes, per layer and overall.

    ``x_list`` entries may be tensors or bare shapes.
    """
    if len(x_list) != len(c_list):
        raise ConfigError(f"{len(x_list)} tensors but {len(c_list)} containers")
    layers = []
    for x, c in zip(x_list, c_list):
        shape = x.shape if hasattr(x, "shape") else tuple(x)
        layers.append(LayerBandwidth(tensor_nbytes(shape, 4), c.total_bytes()))
    return BandwidthReport(tuple(layers), sum(l.uncompressed for l in layers),
                           sum(l.compressed for l in layers))


@dataclass(frozen=True)
class EnergyModel:
    """Energy per DRAM byte and per multiply-accumulate, in picojoules."""

    dram_pj_per_byte: float = 20.0
    mac_pj_fp32: float = 4.6
    mac_pj_int8: float = 0.23

    def __post_init__(self):
        for k in ("dram_pj_per_byte", "mac_pj_fp32", "mac_pj_int8"):
            v = float(getattr(self, k))
            if not (v >= 0 and math.isfinite(v)):
                raise ConfigError(f"{k} must be finite and non-negative, got {v}")
            object.__setattr__(self, k, v)

    @classmethod
    def parse(cls, text: str) -> "EnergyModel":
        vals = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or key not in cls.__dataclass_fields__:
                raise ConfigError(f"line {n}: expected one of {list(cls.__dataclass_fields__)} = value")
            try:
                vals[key] = float(value)
            except ValueError:
                raise ConfigError(f"line {n}: {value.strip()!r} is not a number") from None
        return cls(**vals)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "EnergyModel":
        with open(path) as f:
            return cls.parse(f.read())

    @classmethod
    def default(cls) -> "EnergyModel":
        return cls.parse(resources.files("actcodec").joinpath("data/energy_default.cfg").read_text())

    def lines(self) -> list[str]:
        return [kv_line(**{k: getattr(self, k)}) for k in self.__dataclass_fields__]


@dataclass(frozen=True)
class LayerCost:
    dram_bytes: int
    macs_fp32: int = 0
    macs_int8: int = 0

    def energy_pj(self, model: EnergyModel) -> float:
        return (self.dram_bytes * model.dram_pj_per_byte + self.macs_fp32 * model.mac_pj_fp32
                + self.macs_int8 * model.mac_pj_int8)


@dataclass(frozen=True)
class EnergyReport:
    baseline_pj: float
    pipeline_pj: float

    @property
    def ratio(self) -> float:
        return self.baseline_pj / self.pipeline_pj if self.pipeline_pj else math.inf

    def lines(self) -> list[str]:
        return [kv_line(baseline_pj=self.baseline_pj, pipeline_pj=self.pipeline_pj,
                        energy_ratio=self.ratio)]


def energy_report(baseline: Sequence[LayerCost], pipeline: Sequence[LayerCost],
                  model: Optional[EnergyModel] = None) -> EnergyReport:
    """Ratio of total baseline energy to total pipeline energy."""
    model = model or EnergyModel.default()
    return EnergyReport(math.fsum(l.energy_pj(model) for l in baseline),
                        math.fsum(l.energy_pj(model) for l in pipeline))

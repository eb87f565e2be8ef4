"""Activation map compression for bandwidth-efficient CNN inference.

Feature maps are mapped through a 1x1 channel transform, uniformly
quantized, and entropy coded with either symmetric exp-Golomb codes or a
rANS coder driven by a per-channel Gaussian model. Reference int8 and n:m
sparse convolution kernels and bandwidth/energy accounting complete the
inference side.
"""

from .errors import (CodecError, ConfigError, CorruptionError, DegenerateScaleError, DomainError,
                     FormatError, ShapeError, UnsupportedError)
from .gaussian import ChannelGaussian, CdfTable, build_cdf_table, channel_stats, estimate_bits_gaussian
from .golomb import BitString, ReferenceSelector, select_reference, symeg_decode, symeg_encode
from .kernels import ConvLayer, SparseMask, apply_nm_sparsity, conv_f32, conv_int8
from .pipeline import (CompressedActivation, EnergyModel, LayerCost, PipelineConfig, bandwidth_report,
                       compress, decompress, energy_report, estimate_penalty)
from .quantize import Int8Scales, QuantParams, dequantize_uniform, quantize_int8, quantize_uniform
from .rans import rans_decode, rans_encode
from .tensor import read_tensor, write_tensor
from .transform import ChannelTransform, fit_pca_transform

__version__ = "0.1.0"

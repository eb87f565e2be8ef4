"""Command-line front end.

Exit codes: 0 success, 1 usage or invalid parameters, 2 I/O failure,
3 malformed or corrupted input.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorruptionError, DomainError, FormatError, ShapeError, UnsupportedError
from .kernels import apply_nm_sparsity
from .pipeline import (CompressedActivation, EnergyModel, LayerCost, PipelineConfig, bandwidth_report,
                       compress, decompress, energy_report, estimate_penalty, kv_line)
from .quantize import MAX_BITS, MIN_BITS, int8_weight_scales, quantize_int8
from .tensor import read_array, read_tensor, tensor_nbytes, write_array, write_tensor
from .transform import ChannelTransform, fit_pca_transform

EXIT_USAGE, EXIT_IO, EXIT_FORMAT = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _bits(s: str) -> int:
    v = int(s)
    if not MIN_BITS <= v <= MAX_BITS:
        raise argparse.ArgumentTypeError(f"must be in [{MIN_BITS}, {MAX_BITS}]")
    return v


def _nm(s: str) -> tuple[int, int]:
    try:
        n, m = (int(v) for v in s.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("expected N:M, e.g. 2:4") from None
    if not 0 <= n <= m or m < 1:
        raise argparse.ArgumentTypeError("need 0 <= N <= M and M >= 1")
    return n, m


def _add_transform(p):
    p.add_argument("--transform", metavar="PATH", help="forward matrix (C x C x 1 tensor file)")
    p.add_argument("--transform-bias", metavar="PATH", help="forward bias (C x 1 x 1 tensor file)")
    p.add_argument("--inverse", metavar="PATH", help="inverse matrix; default: exact inverse")
    p.add_argument("--inverse-bias", metavar="PATH")


def _add_coder(p):
    p.add_argument("--coder", choices=["symeg", "eg", "rans"], default="rans")
    p.add_argument("--q", type=_bits, default=8, help="bit depth (default 8)")
    p.add_argument("--k", type=int, help="exp-Golomb order for --coder eg (default 4)")
    p.add_argument("--ref", choices=["mean", "mode", "median"],
                   help="reference number for --coder symeg (default median)")
    _add_transform(p)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="actcodec", description="Activation map compression codec.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("compress", help="compress a C x H x W float tensor")
    p.add_argument("input")
    p.add_argument("output")
    _add_coder(p)

    p = sub.add_parser("decompress", help="reconstruct a tensor from a container")
    p.add_argument("input")
    p.add_argument("output")
    _add_transform(p)

    p = sub.add_parser("estimate", help="estimated coded size and penalty")
    p.add_argument("input")
    _add_coder(p)
    p.add_argument("--gamma", type=float, default=0.0)

    p = sub.add_parser("fit-transform", help="fit a PCA channel transform")
    p.add_argument("samples", help="directory of .atns calibration tensors")
    p.add_argument("--matrix", required=True)
    p.add_argument("--bias", required=True)
    p.add_argument("--inverse")
    p.add_argument("--inverse-bias")

    p = sub.add_parser("quantize-weights", help="n:m sparsify and/or int8-quantize weights")
    p.add_argument("weights")
    p.add_argument("output")
    p.add_argument("--nm", type=_nm)
    p.add_argument("--int8", action="store_true")
    p.add_argument("--scales", metavar="PATH", help="write per-channel int8 scales here")

    p = sub.add_parser("stats", help="bandwidth and energy report over containers")
    p.add_argument("containers", nargs="+")
    p.add_argument("--energy-config", metavar="PATH")
    return parser


def _transform(args) -> ChannelTransform:
    if args.transform is None:
        if args.transform_bias or args.inverse or args.inverse_bias:
            raise UsageError("transform options need --transform")
        return ChannelTransform()
    return ChannelTransform.load(args.transform, args.transform_bias, args.inverse, args.inverse_bias)


def _config(args, gamma: float = 0.0) -> PipelineConfig:
    return PipelineConfig(coder=args.coder, q=args.q, k=args.k, selector=args.ref,
                          transform=_transform(args), gamma=gamma)


def cmd_compress(args) -> int:
    cfg = _config(args)
    x = read_tensor(args.input)
    c = compress(x.astype(np.float32), cfg)
    out = c.save(args.output)
    raw = tensor_nbytes(x.shape, 4)
    print(kv_line(in_bytes=raw, out_bytes=out, ratio=raw / out, bits_per_element=8 * out / x.size,
                  payload_bits=8 * len(c.payload)))
    return 0


def cmd_decompress(args) -> int:
    c = CompressedActivation.load(args.input)
    cfg = PipelineConfig(coder=c.coder, q=c.q, transform=_transform(args))
    x = decompress(c, cfg)
    n = write_tensor(x, args.output)
    print(kv_line(channels=x.shape[0], height=x.shape[1], width=x.shape[2], out_bytes=n))
    return 0


def cmd_estimate(args) -> int:
    cfg = _config(args, args.gamma)
    est = estimate_penalty(read_tensor(args.input).astype(np.float32), cfg)
    print(kv_line(coder=cfg.coder, total_bits=est.total_bits, bits_per_element=est.bits_per_element,
                  normalized=est.normalized, gamma=cfg.gamma, penalty=est.penalty))
    return 0


def cmd_fit_transform(args) -> int:
    if not Path(args.samples).is_dir():
        raise FileNotFoundError(f"no such directory: {args.samples}")
    paths = sorted(Path(args.samples).glob("*.atns"))
    t = fit_pca_transform([read_tensor(p).astype(np.float32) for p in paths])
    t.save(args.matrix, args.bias, args.inverse, args.inverse_bias)
    print(kv_line(samples=len(paths), channels=t.channels))
    return 0


def cmd_quantize_weights(args) -> int:
    w = read_array(args.weights)
    if w.ndim != 4:
        raise ShapeError(f"weights must be a 4-D tensor file, got {w.ndim}-D")
    w = w.astype(np.float32)
    stats = {}
    if args.nm:
        w, mask = apply_nm_sparsity(w, *args.nm)
        stats.update(nm=f"{mask.n}:{mask.m}", nm_valid=int(mask.satisfied()))
    if args.int8:
        scales = int8_weight_scales(w)
        out = quantize_int8(w, scales)
        if args.scales:
            write_array(scales.reshape(-1, 1, 1), args.scales)
    else:
        if args.scales:
            raise UsageError("--scales requires --int8")
        out = w
    write_array(out, args.output)
    stats.update(elements=w.size, nonzero=int(np.count_nonzero(out)))
    print(kv_line(**stats))
    return 0


def cmd_stats(args) -> int:
    model = EnergyModel.from_file(args.energy_config) if args.energy_config else EnergyModel.default()
    cs = [CompressedActivation.load(p) for p in args.containers]
    bw = bandwidth_report([c.shape for c in cs], cs)
    energy = energy_report([LayerCost(l.uncompressed) for l in bw.layers],
                           [LayerCost(l.compressed) for l in bw.layers], model)
    print(bw.table())
    for line in bw.lines() + model.lines() + energy.lines():
        print(line)
    return 0


COMMANDS = {
    "compress": cmd_compress,
    "decompress": cmd_decompress,
    "estimate": cmd_estimate,
    "fit-transform": cmd_fit_transform,
    "quantize-weights": cmd_quantize_weights,
    "stats": cmd_stats,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, DomainError, ShapeError) as e:
        print(f"actcodec: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, CorruptionError, UnsupportedError) as e:
        print(f"actcodec: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as e:
        print(f"actcodec: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

import math
import subprocess
import sys

import numpy as np
import pytest

from actcodec.cli import main
from actcodec.pipeline import (CompressedActivation, EnergyModel, LayerCost, PipelineConfig, bandwidth_report,
                               compress, energy_report, estimate_penalty, kv_line)
from actcodec.quantize import quantize_uniform
from actcodec.tensor import read_array, read_tensor, write_array, write_tensor


def parse_kv(line):
    return dict(item.split("=", 1) for item in line.split())


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr()


@pytest.fixture
def activation(tmp_path, rng):
    x = (rng.normal(size=(4, 12, 10)) * rng.uniform(0.5, 2, size=(4, 1, 1))).astype(np.float32)
    path = tmp_path / "x.atns"
    write_tensor(x, path)
    return x, path


def test_compress_constant_symeg(tmp_path, capsys):
    c, h, w = 2, 8, 9
    src = tmp_path / "const.atns"
    write_tensor(np.full((c, h, w), 3.0, np.float32), src)
    code, out = run(capsys, "compress", src, tmp_path / "c.actc", "--coder", "symeg")
    assert code == 0
    kv = parse_kv(out.out)
    size = 34 + 4 * c + math.ceil(c * h * w / 8)
    assert int(kv["out_bytes"]) == size == (tmp_path / "c.actc").stat().st_size
    assert float(kv["ratio"]) == 4 * c * h * w / size
    assert float(kv["bits_per_element"]) == 8 * size / (c * h * w)


@pytest.mark.parametrize("coder", ["symeg", "eg", "rans"])
def test_round_trip_matches_library(coder, activation, tmp_path, capsys):
    x, src = activation
    out = tmp_path / "x.actc"
    assert run(capsys, "compress", src, out, "--coder", coder, "--q", 10)[0] == 0
    lib = compress(x, PipelineConfig(coder, q=10))
    assert out.read_bytes() == lib.to_bytes()
    back = tmp_path / "back.atns"
    assert run(capsys, "decompress", out, back)[0] == 0
    _, qp = quantize_uniform(x, 10)
    assert np.max(np.abs(read_tensor(back) - x)) <= qp.step / 2 + 1e-6


def test_estimate_matches_library(activation, capsys):
    x, src = activation
    code, out = run(capsys, "estimate", src, "--coder", "symeg", "--ref", "mean", "--gamma", "0.25")
    assert code == 0
    est = estimate_penalty(x, PipelineConfig("symeg", selector="mean", gamma=0.25))
    assert out.out.strip() == kv_line(coder="symeg", total_bits=est.total_bits,
                                      bits_per_element=est.bits_per_element, normalized=est.normalized,
                                      gamma=0.25, penalty=est.penalty)
    kv = parse_kv(run(capsys, "estimate", src)[1].out)
    assert float(kv["penalty"]) == 0.0


def test_transform_flags(activation, tmp_path, capsys, rng):
    x, src = activation
    m = (rng.normal(size=(4, 4)) + 4 * np.eye(4)).astype(np.float32)
    write_array(m.reshape(4, 4, 1), tmp_path / "m.atns")
    write_array(np.ones((4, 1, 1), np.float32), tmp_path / "b.atns")
    flags = ["--transform", tmp_path / "m.atns", "--transform-bias", tmp_path / "b.atns"]
    assert run(capsys, "compress", src, tmp_path / "t.actc", "--q", 12, *flags)[0] == 0
    assert run(capsys, "decompress", tmp_path / "t.actc", tmp_path / "good.atns", *flags)[0] == 0
    assert run(capsys, "decompress", tmp_path / "t.actc", tmp_path / "bad.atns")[0] == 0
    good, bad = read_tensor(tmp_path / "good.atns"), read_tensor(tmp_path / "bad.atns")
    assert np.max(np.abs(good - x)) < 0.05 < np.max(np.abs(bad - x))
    assert run(capsys, "compress", src, tmp_path / "u.actc", "--inverse", tmp_path / "m.atns")[0] == 1


def test_exit_codes(activation, tmp_path, capsys):
    x, src = activation
    assert run(capsys, "compress", tmp_path / "missing.atns", tmp_path / "o.actc")[0] == 2
    with pytest.raises(SystemExit) as e:
        main(["compress", str(src), str(tmp_path / "o.actc"), "--q", "40"])
    assert e.value.code == 1
    assert "usage" in capsys.readouterr().err
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 1
    assert run(capsys, "compress", src, tmp_path / "o.actc", "--coder", "rans", "--k", 3)[0] == 1

    good = tmp_path / "good.actc"
    assert run(capsys, "compress", src, good)[0] == 0
    data = good.read_bytes()
    (tmp_path / "trunc.actc").write_bytes(data[:-5])
    assert run(capsys, "decompress", tmp_path / "trunc.actc", tmp_path / "o.atns")[0] == 3
    bad = bytearray(data)
    bad[60] ^= 0xFF
    (tmp_path / "bad.actc").write_bytes(bytes(bad))
    assert run(capsys, "decompress", tmp_path / "bad.actc", tmp_path / "o.atns")[0] == 3
    assert run(capsys, "decompress", src, tmp_path / "o.atns")[0] == 3
    assert run(capsys, "stats", tmp_path / "nope.actc")[0] == 2


def test_subprocess_entry_point(activation, tmp_path):
    _, src = activation
    ok = subprocess.run([sys.executable, "-m", "actcodec", "compress", str(src), str(tmp_path / "o.actc")],
                        capture_output=True, text=True)
    assert ok.returncode == 0 and "ratio=" in ok.stdout
    bad = subprocess.run([sys.executable, "-m", "actcodec", "compress", str(src), "o", "--q", "40"],
                         capture_output=True, text=True)
    assert bad.returncode == 1 and "usage" in bad.stderr


def test_stats_lines_match_library(tmp_path, capsys, rng):
    paths, comps = [], []
    for i, (coder, shape) in enumerate([("rans", (3, 16, 16)), ("symeg", (2, 8, 24))]):
        x = rng.normal(size=shape).astype(np.float32)
        write_tensor(x, tmp_path / f"{i}.atns")
        paths.append(tmp_path / f"{i}.actc")
        assert run(capsys, "compress", tmp_path / f"{i}.atns", paths[-1], "--coder", coder)[0] == 0
        comps.append(CompressedActivation.load(paths[-1]))
    cfg = tmp_path / "e.cfg"
    cfg.write_text("dram_pj_per_byte = 12.5\n")
    code, out = run(capsys, "stats", *paths, "--energy-config", cfg)
    assert code == 0
    bw = bandwidth_report([c.shape for c in comps], comps)
    model = EnergyModel(dram_pj_per_byte=12.5)
    en = energy_report([LayerCost(l.uncompressed) for l in bw.layers],
                       [LayerCost(l.compressed) for l in bw.layers], model)
    lines = out.out.splitlines()
    expected = bw.lines() + model.lines() + en.lines()
    assert lines[-len(expected):] == expected
    total = parse_kv(expected[2])
    assert float(total["ratio"]) == sum(l.uncompressed for l in bw.layers) / sum(c.total_bytes() for c in comps)
    assert lines[0].split("\t")[0] == "layer"


def test_fit_transform(tmp_path, capsys, rng):
    samples = tmp_path / "samples"
    samples.mkdir()
    scales = np.array([3.0, 1.0, 2.0]).reshape(3, 1, 1)
    for i in range(4):
        write_tensor((rng.normal(size=(3, 20, 20)) * scales + 5).astype(np.float32), samples / f"{i}.atns")
    code, out = run(capsys, "fit-transform", samples, "--matrix", tmp_path / "m.atns",
                    "--bias", tmp_path / "b.atns")
    assert code == 0 and parse_kv(out.out) == {"samples": "4", "channels": "3"}
    m = read_array(tmp_path / "m.atns").reshape(3, 3)
    np.testing.assert_allclose(np.abs(m), [[1, 0, 0], [0, 0, 1], [0, 1, 0]], atol=0.15)
    assert run(capsys, "fit-transform", tmp_path / "none", "--matrix", "m", "--bias", "b")[0] == 2


def test_quantize_weights(tmp_path, capsys, rng):
    write_array(np.ones((2, 1, 2, 4), np.float32), tmp_path / "w.atns")
    code, out = run(capsys, "quantize-weights", tmp_path / "w.atns", tmp_path / "o.atns", "--nm", "2:4")
    assert code == 0 and parse_kv(out.out)["nm_valid"] == "1"
    assert read_array(tmp_path / "o.atns").reshape(-1).tolist() == [1, 1, 0, 0] * 4

    w = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
    write_array(w, tmp_path / "w2.atns")
    code, _ = run(capsys, "quantize-weights", tmp_path / "w2.atns", tmp_path / "q.atns", "--int8",
                  "--scales", tmp_path / "s.atns")
    assert code == 0
    q = read_array(tmp_path / "q.atns")
    s = read_array(tmp_path / "s.atns").reshape(-1)
    assert q.dtype == np.int8 and np.abs(q).max() == 127
    np.testing.assert_allclose(q / s[:, None, None, None], w, atol=0.5 / s.min())
    assert run(capsys, "quantize-weights", tmp_path / "w2.atns", tmp_path / "x", "--scales", "s")[0] == 1
    with pytest.raises(SystemExit):
        main(["quantize-weights", str(tmp_path / "w2.atns"), "x", "--nm", "4:2"])

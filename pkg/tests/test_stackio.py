"""File round trips and corruption handling for stacks, maps, calibrations."""
import json
import math

import numpy as np
import pytest

from qscm.errors import FormatError, IoError
from qscm.framesim import FrameStack
from qscm.recon import FieldMap
from qscm.spin import (DualFmProtocol, SpinSystem, build_calibration,
                       invert_calibration)
from qscm.stackio import (read_calibration, read_map, read_stack,
                          write_calibration, write_map, write_pgm,
                          write_stack)


def sample_stack():
    rng = np.random.default_rng(77)
    i_planes = rng.normal(size=(3, 4, 6)).astype(np.float32)
    q_planes = rng.normal(size=(3, 4, 6)).astype(np.float32)
    return FrameStack(width=6, height=4, i_planes=i_planes, q_planes=q_planes,
                      timestamps_ms=np.array([25.0, 75.0, 125.0]),
                      metadata={"kind": "timeseries",
                                "protocol": {"kind": "dual_fm"},
                                "note": "unit"})


def test_stack_round_trip(tmp_path):
    path = str(tmp_path / "s.qscm")
    stack = sample_stack()
    write_stack(path, stack)
    back = read_stack(path)
    assert back.width == 6 and back.height == 4 and back.n_frames == 3
    assert np.array_equal(back.i_planes, stack.i_planes)
    assert np.array_equal(back.q_planes, stack.q_planes)
    assert np.array_equal(back.timestamps_ms, stack.timestamps_ms)
    assert back.metadata["protocol"]["kind"] == "dual_fm"
    assert back.metadata["note"] == "unit"


def test_stack_write_is_deterministic(tmp_path):
    a, b = str(tmp_path / "a.qscm"), str(tmp_path / "b.qscm")
    stack = sample_stack()
    write_stack(a, stack)
    write_stack(b, stack)
    assert open(a, "rb").read() == open(b, "rb").read()


def test_stack_corruption(tmp_path):
    path = str(tmp_path / "s.qscm")
    write_stack(path, sample_stack())
    raw = open(path, "rb").read()

    short = str(tmp_path / "short.qscm")
    open(short, "wb").write(raw[:10])
    with pytest.raises(FormatError, match="header"):
        read_stack(short)

    magic = str(tmp_path / "magic.qscm")
    open(magic, "wb").write(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        read_stack(magic)

    vers = str(tmp_path / "vers.qscm")
    open(vers, "wb").write(raw[:4] + bytes([9, 0]) + raw[6:])
    with pytest.raises(FormatError, match="version"):
        read_stack(vers)

    # payload truncation: cut inside the frame data
    trunc = str(tmp_path / "trunc.qscm")
    open(trunc, "wb").write(raw[:24 + 50])
    with pytest.raises(FormatError, match="truncated"):
        read_stack(trunc)

    # flip one payload byte: CRC must catch it
    flip = bytearray(raw)
    flip[24 + 13] ^= 0xFF
    crc = str(tmp_path / "crc.qscm")
    open(crc, "wb").write(bytes(flip))
    with pytest.raises(FormatError, match="CRC"):
        read_stack(crc)

    # garbage metadata trailer
    meta = str(tmp_path / "meta.qscm")
    n_payload = 3 * 2 * 4 * 6 * 4
    open(meta, "wb").write(raw[:24 + n_payload] + b"{broken")
    with pytest.raises(FormatError, match="metadata"):
        read_stack(meta)


def test_stack_missing_file(tmp_path):
    with pytest.raises(IoError):
        read_stack(str(tmp_path / "nope.qscm"))


def sample_map():
    values = np.array([[1.5, np.nan], [-2.25, 0.0]])
    valid = np.array([[True, False], [True, True]])
    clipped = np.array([[False, False], [True, False]])
    return FieldMap(values=values, valid=valid, clipped=clipped, bin_factor=2,
                    x_um=np.array([-3.0, 3.0]), y_um=np.array([-3.0, 3.0]))


def test_map_round_trip(tmp_path):
    path = str(tmp_path / "m.csv")
    fmap = sample_map()
    write_map(path, fmap, {"bin_factor": 2, "origin": "unit"})
    back, sidecar = read_map(path)
    assert sidecar["origin"] == "unit"
    assert np.array_equal(back.valid, fmap.valid)
    assert np.array_equal(back.clipped, fmap.clipped)
    assert back.values[0, 0] == 1.5
    assert back.values[1, 0] == -2.25
    assert math.isnan(back.values[0, 1])
    assert np.array_equal(back.x_um, fmap.x_um)
    assert np.array_equal(back.y_um, fmap.y_um)
    # sidecar lives next to the csv
    assert json.load(open(path + ".json"))["bin_factor"] == 2


def test_map_format_checks(tmp_path):
    path = str(tmp_path / "m.csv")
    write_map(path, sample_map(), {})
    lines = open(path).read().splitlines()
    bad = str(tmp_path / "bad.csv")
    open(bad, "w").write("\n".join(["a,b,c"] + lines[1:]) + "\n")
    open(bad + ".json", "w").write("{}")
    with pytest.raises(FormatError, match="header"):
        read_map(bad)
    with pytest.raises(IoError):
        read_map(str(tmp_path / "missing.csv"))


def test_map_newlines_are_lf(tmp_path):
    path = str(tmp_path / "m.csv")
    write_map(path, sample_map(), {})
    raw = open(path, "rb").read()
    assert b"\r" not in raw


def test_calibration_round_trip(tmp_path):
    spin = SpinSystem(linewidth_sigma_mhz=5.876)
    proto = DualFmProtocol(spin=spin, bias_mt=15.375, detuning_mhz=4.27)
    curve = build_calibration(proto, -500.0, 500.0, n_samples=501)
    path = str(tmp_path / "cal.json")
    write_calibration(path, curve)
    back = read_calibration(path)
    assert np.array_equal(back.samples_b_ut, curve.samples_b_ut)
    assert np.array_equal(back.samples_signal, curve.samples_signal)
    assert back.sensing_lo_ut == curve.sensing_lo_ut
    assert back.sensing_hi_ut == curve.sensing_hi_ut
    # the reloaded curve inverts identically
    a = invert_calibration(curve, 0.0)
    b = invert_calibration(back, 0.0)
    assert a == b


def test_calibration_format_error(tmp_path):
    path = str(tmp_path / "cal.json")
    open(path, "w").write("]{")
    with pytest.raises(FormatError):
        read_calibration(path)
    open(path, "w").write(json.dumps({"samples_b_ut": [1, 2]}))
    with pytest.raises(FormatError, match="missing"):
        read_calibration(path)


def test_write_pgm(tmp_path):
    path = str(tmp_path / "m.pgm")
    values = np.array([[-2.0, 0.0], [2.0, np.nan]])
    valid = np.array([[True, True], [True, False]])
    fmap = FieldMap(values=values, valid=valid,
                    clipped=np.zeros((2, 2), dtype=bool), bin_factor=1,
                    x_um=np.array([0.0, 1.0]), y_um=np.array([0.0, 1.0]))
    write_pgm(path, fmap)
    raw = open(path, "rb").read()
    header, pixels = raw.rsplit(b"\n", 1)[0], raw.rsplit(b"\n", 1)[1]
    assert header.split()[0] == b"P5"
    assert header.split()[1:3] == [b"2", b"2"]
    assert header.split()[3] == b"255"
    assert len(pixels) == 4
    assert pixels[3] == 0      # excluded pixel is black
    assert pixels[0] == 1      # -2 maps to the bottom of the used range
    assert pixels[1] == 128    # 0 sits mid-scale on a symmetric range
    assert pixels[2] == 255    # +2 tops out

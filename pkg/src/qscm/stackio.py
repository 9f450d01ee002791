"""File formats: frame stacks, field maps, calibration curves, PGM renders.

Frame stack layout (little-endian throughout):

    header  '<4sHHIIII' = magic b"QSCM", version, flags, width, height,
            n_frames, CRC-32 of the payload (24 bytes total)
    payload per frame: I plane then Q plane, float32 row-major,
            top-left origin (2 * width * height * n_frames * 4 bytes)
    trailer UTF-8 JSON metadata (sorted keys), includes the frame
            timestamps

Stacks are written from float32 planes, so write-then-read is bitwise.
Maps are CSV (one row per virtual pixel, floats via repr so they round
trip exactly) with a JSON sidecar at "<csv path>.json".  Nothing here
records wall-clock time; outputs depend only on inputs.
"""
from __future__ import annotations

import csv
import json
import struct
import zlib

import numpy as np

from .errors import FormatError, IoError
from .framesim import FrameStack
from .recon import FieldMap
from .spin import CalibrationCurve

MAGIC = b"QSCM"
VERSION = 1
_HEADER = struct.Struct("<4sHHIIII")


def write_stack(path: str, stack: FrameStack) -> None:
    """Serialize a stack; planes are stored as float32."""
    n, h, w = stack.n_frames, stack.height, stack.width
    parts = []
    for k in range(n):
        parts.append(np.ascontiguousarray(
            stack.i_planes[k], dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(
            stack.q_planes[k], dtype="<f4").tobytes())
    payload = b"".join(parts)
    meta = dict(stack.metadata)
    meta["timestamps_ms"] = [float(t) for t in stack.timestamps_ms]
    trailer = json.dumps(meta, sort_keys=True).encode("utf-8")
    header = _HEADER.pack(MAGIC, VERSION, 0, w, h, n, zlib.crc32(payload))
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
            fh.write(trailer)
    except OSError as exc:
        raise IoError(f"cannot write stack file {path}: {exc}") from exc


def read_stack(path: str) -> FrameStack:
    """Read a stack file back; the inverse of write_stack, bitwise.

    Raises:
        FormatError: bad magic, unsupported version, truncation, CRC
            mismatch, or undecodable metadata.
        IoError: the file cannot be opened or read.
    """
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read stack file {path}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: shorter than the stack header")
    magic, version, _flags, w, h, n, crc = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    payload_len = 2 * w * h * n * 4
    end = _HEADER.size + payload_len
    if len(blob) < end:
        raise FormatError(f"{path}: truncated payload "
                          f"({len(blob) - _HEADER.size} of {payload_len} bytes)")
    payload = blob[_HEADER.size:end]
    if zlib.crc32(payload) != crc:
        raise FormatError(f"{path}: payload CRC mismatch")
    try:
        meta = json.loads(blob[end:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: undecodable metadata trailer: {exc}") from exc
    planes = np.frombuffer(payload, dtype="<f4").reshape(n, 2, h, w)
    timestamps = np.asarray(meta.pop("timestamps_ms"), dtype=float)
    return FrameStack(width=w, height=h,
                      i_planes=planes[:, 0].copy(),
                      q_planes=planes[:, 1].copy(),
                      timestamps_ms=timestamps, metadata=meta)


def write_map(path: str, fmap: FieldMap, sidecar: dict) -> None:
    """CSV map (header x_um,y_um,b_ut,valid,clipped) plus JSON sidecar.

    Rows run row-major over the virtual grid; invalid pixels leave b_ut
    empty.  The sidecar lands at "<path>.json".
    """
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["x_um", "y_um", "b_ut", "valid", "clipped"])
            for r in range(fmap.height_v):
                for c in range(fmap.width_v):
                    b = repr(float(fmap.values[r, c])) if fmap.valid[r, c] else ""
                    writer.writerow([repr(float(fmap.x_um[c])),
                                     repr(float(fmap.y_um[r])), b,
                                     int(fmap.valid[r, c]),
                                     int(fmap.clipped[r, c])])
        with open(path + ".json", "w") as fh:
            json.dump(sidecar, fh, sort_keys=True, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write map file {path}: {exc}") from exc


def read_map(path: str) -> tuple:
    """Read a map CSV and its sidecar; returns (FieldMap, sidecar dict)."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = list(reader)
        with open(path + ".json") as fh:
            sidecar = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read map file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}.json: undecodable sidecar: {exc}") from exc
    if header != ["x_um", "y_um", "b_ut", "valid", "clipped"]:
        raise FormatError(f"{path}: unexpected map header {header}")
    try:
        xs = sorted({float(r[0]) for r in rows})
        ys = sorted({float(r[1]) for r in rows})
        x_index = {v: i for i, v in enumerate(xs)}
        y_index = {v: i for i, v in enumerate(ys)}
        values = np.full((len(ys), len(xs)), np.nan)
        valid = np.zeros((len(ys), len(xs)), dtype=bool)
        clipped = np.zeros((len(ys), len(xs)), dtype=bool)
        for r in rows:
            i, j = y_index[float(r[1])], x_index[float(r[0])]
            valid[i, j] = r[3] == "1"
            clipped[i, j] = r[4] == "1"
            if valid[i, j]:
                values[i, j] = float(r[2])
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: malformed map row: {exc}") from exc
    fmap = FieldMap(values=values, valid=valid, clipped=clipped,
                    bin_factor=int(sidecar.get("bin_factor", 1)),
                    x_um=np.asarray(xs), y_um=np.asarray(ys))
    return fmap, sidecar


def write_calibration(path: str, curve: CalibrationCurve) -> None:
    doc = {"protocol": curve.protocol,
           "sensing_lo_ut": curve.sensing_lo_ut,
           "sensing_hi_ut": curve.sensing_hi_ut,
           "samples_b_ut": [float(v) for v in curve.samples_b_ut],
           "samples_signal": [float(v) for v in curve.samples_signal]}
    try:
        with open(path, "w") as fh:
            json.dump(doc, fh, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write calibration {path}: {exc}") from exc


def read_calibration(path: str) -> CalibrationCurve:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read calibration {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: undecodable calibration: {exc}") from exc
    try:
        return CalibrationCurve(
            samples_b_ut=np.asarray(doc["samples_b_ut"], dtype=float),
            samples_signal=np.asarray(doc["samples_signal"], dtype=float),
            sensing_lo_ut=float(doc["sensing_lo_ut"]),
            sensing_hi_ut=float(doc["sensing_hi_ut"]),
            protocol=str(doc["protocol"]))
    except KeyError as exc:
        raise FormatError(f"{path}: calibration missing field {exc}") from exc


def write_pgm(path: str, fmap: FieldMap, lo_ut=None, hi_ut=None) -> None:
    """8-bit PGM rendering of a field map.

    Gray 0 is reserved for excluded pixels; valid fields map linearly onto
    1..255 over [lo_ut, hi_ut].  The default range is symmetric about zero
    at the largest valid |field| (so mid-gray 128 is zero field).
    """
    vals = fmap.values
    if lo_ut is None or hi_ut is None:
        m = np.nanmax(np.abs(vals[fmap.valid])) if fmap.valid.any() else 1.0
        m = m if m > 0 else 1.0
        lo_ut, hi_ut = -m, m
    span = hi_ut - lo_ut
    scaled = np.clip((vals - lo_ut) / span, 0.0, 1.0)
    gray = np.where(fmap.valid, 1 + np.round(254 * scaled), 0.0)
    gray = np.nan_to_num(gray).astype(np.uint8)
    try:
        with open(path, "wb") as fh:
            fh.write(f"P5\n{fmap.width_v} {fmap.height_v}\n255\n".encode())
            fh.write(gray.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write image {path}: {exc}") from exc

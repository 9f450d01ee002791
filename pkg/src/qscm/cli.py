"""Command-line front end.

Subcommands map one-to-one onto the pipeline stages:

    synth        fixed-drive time-series stack from a config
    spectrum     frequency-swept stack (one frame per drive frequency)
    calibrate    signal-vs-field curve for the configured protocol
    fitmap       per-pixel line fits -> field map CSV (+ optional images)
    recon        calibration-curve inversion -> traces CSV (+ per-frame map)
    fit-current  wire profile fit, or pulse-current inference vs a reference
    report       sensitivity figure; with --out-dir also figures + summary.csv

Exit codes: 0 success, 2 invalid config, 3 file I/O failure, 4 malformed
data file, 5 protocol mismatch, 1 any other pipeline error.  QSCM_SEED
serves as a seed fallback when neither --seed nor the config provides one.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import config as cfgmod
from .errors import ConfigInvalid, FormatError, IoError, ProtocolMismatch, QscmError
from .framesim import synth_spectrum_stack, synth_timeseries_stack
from .recon import (FieldMap, bin_frames, fit_spectrum_grid, infer_pulse_current,
                    fit_wire_profile, map_from_fits, profile_across_wire,
                    reconstruct_timeseries, sensitivity_report, threshold_mask,
                    virtual_coords_um)
from .spin import SpinSystem, build_calibration
from .stackio import (read_calibration, read_map, read_stack,
                      write_calibration, write_map, write_pgm, write_stack)
from .wirefield import SensorSlab, WireGeometry, depth_averaged_field


def _recon_meta(cfg: dict) -> dict:
    """Reconstruction preferences embedded into stack metadata at synth time."""
    r = cfg["recon"]
    return {"bin_factor": r["bin_factor"], "roi": r["roi"],
            "snr_min": r["snr_min"], "stderr_max_mhz": r["stderr_max_mhz"],
            "mode": r["mode"],
            "calibration_span_ut": r["calibration_span_ut"],
            "calibration_samples": r["calibration_samples"]}


def cmd_synth(args) -> int:
    cfg = cfgmod.load_config(args.config)
    kind = cfg["protocol"]["kind"]
    if kind == "single_am":
        raise ConfigInvalid("protocol.kind: single_am is swept-only; "
                            "use the spectrum command")
    scene = cfgmod.build_scene(cfg)
    spin = cfgmod.build_spin(cfg)
    protocol = cfgmod.build_protocol(cfg, spin, scene)
    timing = cfgmod.build_timing(cfg)
    noise = cfgmod.build_noise(cfg, cfgmod.resolve_seed(cfg, args.seed))
    drift = cfgmod.build_drift(cfg)
    stack = synth_timeseries_stack(scene, spin, protocol, timing, noise,
                                   drift, threads=args.threads)
    stack.metadata["recon"] = _recon_meta(cfg)
    write_stack(args.out, stack)
    print(f"wrote {args.out}: {stack.n_frames} frames of "
          f"{stack.width}x{stack.height} ({kind})")
    return 0


def cmd_spectrum(args) -> int:
    cfg = cfgmod.load_config(args.config)
    kind = cfg["protocol"]["kind"]
    if kind not in ("single_am", "single_fm"):
        raise ConfigInvalid(f"protocol.kind: '{kind}' is not a swept "
                            f"spectrum protocol")
    sweep = cfgmod.sweep_mhz(cfg)
    if sweep is None:
        raise ConfigInvalid("protocol.sweep: required for the spectrum command")
    scene = cfgmod.build_scene(cfg)
    spin = cfgmod.build_spin(cfg)
    timing = cfgmod.build_timing(cfg)
    noise = cfgmod.build_noise(cfg, cfgmod.resolve_seed(cfg, args.seed))
    proto = "am" if kind == "single_am" else "fm"
    stack = synth_spectrum_stack(scene, spin, sweep, proto, timing, noise,
                                 cfg["protocol"]["fm_depth_mhz"],
                                 threads=args.threads)
    stack.metadata["recon"] = _recon_meta(cfg)
    write_stack(args.out, stack)
    print(f"wrote {args.out}: {stack.n_frames} sweep frames of "
          f"{stack.width}x{stack.height} ({proto})")
    return 0


def cmd_calibrate(args) -> int:
    cfg = cfgmod.load_config(args.config)
    scene = cfgmod.build_scene(cfg)
    spin = cfgmod.build_spin(cfg)
    protocol = cfgmod.build_protocol(cfg, spin, scene)
    lo, hi = cfg["recon"]["calibration_span_ut"]
    curve = build_calibration(protocol, lo, hi,
                              cfg["recon"]["calibration_samples"])
    write_calibration(args.out, curve)
    if args.plot:
        from .plots import render_calibration
        render_calibration(args.plot, curve)
    print(f"wrote {args.out}: {curve.protocol} sensing range "
          f"[{curve.sensing_lo_ut:.2f}, {curve.sensing_hi_ut:.2f}] uT")
    return 0


def _roi_tuple(roi) -> tuple | None:
    if roi is None:
        return None
    return (roi["x_px"], roi["y_px"], roi["width_px"], roi["height_px"])


def cmd_fitmap(args) -> int:
    stack = read_stack(args.in_path)
    meta = stack.metadata
    if meta.get("kind") != "spectrum":
        raise ProtocolMismatch("fitmap needs a swept spectrum stack, got "
                               f"'{meta.get('kind')}'")
    rec = meta.get("recon", {})
    bin_factor = args.bin if args.bin is not None else rec.get("bin_factor", 1)
    snr_min = args.snr_min if args.snr_min is not None \
        else rec.get("snr_min", 3.0)
    stderr_max = args.stderr_max if args.stderr_max is not None \
        else rec.get("stderr_max_mhz", 2.0)
    binned = bin_frames(stack, bin_factor, _roi_tuple(rec.get("roi")))
    shape = "peak" if meta["protocol"]["kind"] == "am" else "fm_difference"
    grid = fit_spectrum_grid(binned, meta["protocol"]["sweep_mhz"], shape,
                             meta["protocol"]["fm_depth_mhz"],
                             threads=args.threads)
    valid = threshold_mask(grid, snr_min, stderr_max)
    x_um, y_um = virtual_coords_um(binned.metadata)
    spin = SpinSystem(**meta["spin"])
    nu1_ref = meta["protocol"]["nu1_ref_mhz"]
    fmap = map_from_fits(grid, spin, nu1_ref, valid, x_um, y_um, bin_factor)
    sidecar = {"bin_factor": bin_factor,
               "roi": binned.metadata["recon"],
               "protocol": meta["protocol"],
               "nu1_ref_mhz": nu1_ref,
               "scene": meta["scene"],
               "thresholds": {"snr_min": snr_min,
                              "stderr_max_mhz": stderr_max},
               "provenance": meta.get("provenance", {"tool": "qscm"})}
    write_map(args.out, fmap, sidecar)
    if args.pgm:
        write_pgm(args.pgm, fmap)
    if args.plot:
        from .plots import render_map
        render_map(args.plot, fmap)
    n_valid = int(valid.sum())
    print(f"wrote {args.out}: {fmap.width_v}x{fmap.height_v} virtual pixels, "
          f"{n_valid} valid")
    return 0


def cmd_recon(args) -> int:
    stack = read_stack(args.in_path)
    curve = read_calibration(args.cal)
    rec = stack.metadata.get("recon", {})
    bin_factor = args.bin if args.bin is not None else rec.get("bin_factor", 1)
    mode = args.mode if args.mode is not None else rec.get("mode", "clamp")
    binned = bin_frames(stack, bin_factor, _roi_tuple(rec.get("roi")))
    fields, clipped = reconstruct_timeseries(binned, curve, mode)
    x_um, y_um = virtual_coords_um(binned.metadata)
    t_ms = binned.timestamps_ms
    try:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["frame", "t_ms", "x_um", "y_um", "b_ut",
                             "clipped"])
            for k in range(binned.n_frames):
                for r in range(binned.height):
                    for c in range(binned.width):
                        writer.writerow([k, repr(float(t_ms[k])),
                                         repr(float(x_um[c])),
                                         repr(float(y_um[r])),
                                         repr(float(fields[k, r, c])),
                                         int(clipped[k, r, c])])
    except OSError as exc:
        raise IoError(f"cannot write traces {args.out}: {exc}") from exc
    if args.map_frame is not None:
        if not 0 <= args.map_frame < binned.n_frames:
            raise ConfigInvalid(f"--map-frame: must be in [0, "
                                f"{binned.n_frames})")
        if not args.out_map:
            raise ConfigInvalid("--out-map: required with --map-frame")
        k = args.map_frame
        fmap = FieldMap(values=fields[k],
                        valid=np.ones_like(clipped[k]),
                        clipped=clipped[k], bin_factor=bin_factor,
                        x_um=x_um, y_um=y_um)
        sidecar = {"bin_factor": bin_factor,
                   "roi": binned.metadata["recon"],
                   "protocol": stack.metadata["protocol"],
                   "frame": k, "t_ms": float(t_ms[k]), "mode": mode,
                   "scene": stack.metadata["scene"],
                   "provenance": stack.metadata.get("provenance",
                                                    {"tool": "qscm"})}
        write_map(args.out_map, fmap, sidecar)
    if args.plot:
        from .plots import render_traces
        mean_trace = np.nanmean(fields, axis=(1, 2))
        render_traces(args.plot, t_ms, {"spatial mean": mean_trace})
    n_clip = int(clipped.sum())
    print(f"wrote {args.out}: {binned.n_frames} frames x "
          f"{binned.width}x{binned.height} pixels, {n_clip} clipped samples")
    return 0


def cmd_fit_current(args) -> int:
    fmap, sidecar = read_map(args.map)
    x, profile = profile_across_wire(fmap)
    if args.reference_map:
        ref_map, _ = read_map(args.reference_map)
        xr, ref_profile = profile_across_wire(ref_map)
        if x.size != xr.size or not np.allclose(x, xr):
            raise ConfigInvalid("--reference-map: reference and measured "
                                "maps sample different x grids")
        i_ma = infer_pulse_current(profile, ref_profile,
                                   args.reference_current_a)
        result = {"i_ma": i_ma, "i_ref_a": args.reference_current_a,
                  "n_points": int(x.size)}
        model_xy = None
    else:
        thickness = args.thickness_um
        if thickness is None:
            thickness = sidecar.get("scene", {}).get("slab", {}) \
                .get("thickness_um")
        if thickness is None:
            raise ConfigInvalid("--thickness-um: required when the map "
                                "sidecar carries no scene")
        fit = fit_wire_profile(x, profile, thickness)
        result = {"d_hat_um": fit.d_hat_um, "i_hat_a": fit.i_hat_a,
                  "x0_um": fit.x0_um, "d_stderr_um": fit.d_stderr_um,
                  "i_stderr_a": fit.i_stderr_a,
                  "residual_rms_ut": fit.residual_rms_ut,
                  "thickness_um": thickness, "n_points": int(x.size)}
        dense_x = np.linspace(x[0], x[-1], 400)
        geom = WireGeometry(radius_d_um=fit.d_hat_um, x0_um=fit.x0_um)
        slab = SensorSlab(thickness_um=thickness)
        model_xy = (dense_x,
                    depth_averaged_field(dense_x, geom, slab, fit.i_hat_a))
    text = json.dumps(result, sort_keys=True, indent=2) + "\n"
    if args.out:
        try:
            with open(args.out, "w") as fh:
                fh.write(text)
        except OSError as exc:
            raise IoError(f"cannot write {args.out}: {exc}") from exc
    sys.stdout.write(text)
    if args.plot:
        from .plots import render_profile
        render_profile(args.plot, x, profile, model=model_xy)
    return 0


def cmd_report(args) -> int:
    sens = sensitivity_report(args.noise, args.cycle_ms, args.sequences)
    print(f"sensitivity: {sens:.2f} uT/sqrt(Hz) "
          f"(noise floor {args.noise:g} uT, {args.cycle_ms:g} ms per frame, "
          f"{args.sequences} sequences)")
    if not args.out_dir:
        return 0
    os.makedirs(args.out_dir, exist_ok=True)
    summary = [("noise_floor_ut", args.noise),
               ("frame_integration_ms", args.cycle_ms),
               ("n_sequences", args.sequences),
               ("sensitivity_ut_per_sqrt_hz", sens)]
    figures = []
    if args.map:
        from .plots import render_map
        fmap, _ = read_map(args.map)
        out = os.path.join(args.out_dir, "map.png")
        render_map(out, fmap)
        figures.append(out)
        vals = fmap.values[fmap.valid]
        if vals.size:
            summary.append(("map_min_ut", float(np.min(vals))))
            summary.append(("map_max_ut", float(np.max(vals))))
    if args.cal:
        from .plots import render_calibration
        curve = read_calibration(args.cal)
        out = os.path.join(args.out_dir, "calibration.png")
        render_calibration(out, curve)
        figures.append(out)
        summary.append(("sensing_lo_ut", curve.sensing_lo_ut))
        summary.append(("sensing_hi_ut", curve.sensing_hi_ut))
    if args.traces:
        from .plots import render_traces
        t, mean_tr, lo_tr, hi_tr = _load_mean_trace(args.traces)
        out = os.path.join(args.out_dir, "traces.png")
        render_traces(out, t, {"mean": mean_tr, "min": lo_tr, "max": hi_tr})
        figures.append(out)
    summary_path = os.path.join(args.out_dir, "summary.csv")
    try:
        with open(summary_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["metric", "value"])
            for name, value in summary:
                writer.writerow([name, repr(float(value))])
    except OSError as exc:
        raise IoError(f"cannot write {summary_path}: {exc}") from exc
    print(f"wrote {summary_path}" +
          (f" and {len(figures)} figure(s)" if figures else ""))
    return 0


def _load_mean_trace(path: str):
    """Per-frame mean/min/max field from a traces CSV."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = list(reader)
    except OSError as exc:
        raise IoError(f"cannot read traces {path}: {exc}") from exc
    if header != ["frame", "t_ms", "x_um", "y_um", "b_ut", "clipped"]:
        raise FormatError(f"{path}: unexpected traces header {header}")
    by_frame: dict = {}
    try:
        for row in rows:
            k = int(row[0])
            t, b = float(row[1]), float(row[4])
            by_frame.setdefault(k, (t, []))[1].append(b)
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: malformed traces row: {exc}") from exc
    frames = sorted(by_frame)
    t = np.array([by_frame[k][0] for k in frames])
    mean_tr = np.array([np.mean(by_frame[k][1]) for k in frames])
    lo_tr = np.array([np.min(by_frame[k][1]) for k in frames])
    hi_tr = np.array([np.max(by_frame[k][1]) for k in frames])
    return t, mean_tr, lo_tr, hi_tr


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qscm",
        description="Forward simulation and reconstruction for widefield "
                    "lock-in magnetometry imaging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a fixed-drive stack")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("spectrum", help="synthesize a swept spectrum stack")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("calibrate", help="build a signal-vs-field curve")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", default=None)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("fitmap", help="per-pixel line fits to a field map")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bin", type=int, default=None)
    p.add_argument("--snr-min", type=float, default=None)
    p.add_argument("--stderr-max", type=float, default=None)
    p.add_argument("--pgm", default=None)
    p.add_argument("--plot", default=None)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_fitmap)

    p = sub.add_parser("recon", help="invert a stack through a calibration")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--cal", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bin", type=int, default=None)
    p.add_argument("--mode", choices=("clamp", "strict"), default=None)
    p.add_argument("--map-frame", type=int, default=None)
    p.add_argument("--out-map", default=None)
    p.add_argument("--plot", default=None)
    p.set_defaults(func=cmd_recon)

    p = sub.add_parser("fit-current",
                       help="wire profile fit or pulse-current inference")
    p.add_argument("--map", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--thickness-um", type=float, default=None)
    p.add_argument("--reference-map", default=None)
    p.add_argument("--reference-current-a", type=float, default=None)
    p.add_argument("--plot", default=None)
    p.set_defaults(func=cmd_fit_current)

    p = sub.add_parser("report", help="sensitivity figure and summary outputs")
    p.add_argument("--noise", type=float, required=True,
                   help="per-frame noise floor in uT")
    p.add_argument("--cycle-ms", type=float, required=True,
                   help="integration time per frame in ms")
    p.add_argument("--sequences", type=int, required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--map", default=None)
    p.add_argument("--cal", default=None)
    p.add_argument("--traces", default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "fit-current" and args.reference_map \
            and args.reference_current_a is None:
        print("error: --reference-current-a is required with "
              "--reference-map", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except QscmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

"""End-to-end checks of the toolkit's numeric contracts.

One test per criterion; each asserts its stated tolerances and runtime
budget and prints a single summary line (visible with -s or on failure).
"""
import json
import math
import pathlib
import subprocess
import sys
import time

import numpy as np
import pytest

from qscm import config as cfgmod
from qscm.fitting import fit_gaussian
from qscm.framesim import (NoiseModel, TimingConfig, synth_spectrum_stack,
                           synth_timeseries_stack)
from qscm.recon import (bin_frames, fit_spectrum_grid, fit_wire_profile,
                        infer_pulse_current, map_from_fits,
                        profile_across_wire, reconstruct_timeseries,
                        sensitivity_report, threshold_mask, virtual_coords_um)
from qscm.spin import (DualFmProtocol, GslacModel, GslacProtocol, SpinSystem,
                       bias_from_frequencies, build_calibration,
                       dual_fm_response, fm_difference, gaussian_peak,
                       invert_calibration, odmr_frequencies,
                       single_fm_response)
from qscm.wirefield import (FIELD_COEFF_UT_UM_PER_A, SensorSlab, WireGeometry,
                            depth_averaged_field)

CONFIGS = pathlib.Path(__file__).resolve().parent.parent / "configs"


def load(name):
    return cfgmod.load_config(str(CONFIGS / name))


def test_criterion_01_resonance_round_trip():
    t0 = time.monotonic()
    spin = SpinSystem()
    assert spin.gslac1_mt == 2.5
    assert spin.gslac2_mt == 1.25
    rng = np.random.default_rng(1)
    worst = 0.0
    for b in rng.uniform(2.5, 30.0, 10_000):
        nu1, nu2 = odmr_frequencies(spin, float(b))
        back = bias_from_frequencies(spin, nu1, nu2)
        worst = max(worst, abs(back - b) / b)
    elapsed = time.monotonic() - t0
    assert worst < 1e-13
    assert elapsed < 1.0
    print(f"criterion 1 PASS: 10^4 round trips, worst rel err {worst:.2e}, "
          f"{elapsed:.2f} s")


def test_criterion_02_bias_inversion_example():
    b = bias_from_frequencies(SpinSystem(), 413.0, 550.0)
    assert b == 17.196428571428573  # (413 + 550)/56 exactly, in float64
    assert round(b, 3) == 17.196
    assert abs(b - 17.0) < 0.2  # matches the rounded quoted value
    print(f"criterion 2 PASS: (413, 550) MHz -> {b:.6f} mT")


def test_criterion_03_depth_integration_oracle():
    t0 = time.monotonic()
    x = np.linspace(-2000.0, 2000.0, 801)
    x = x[x != 0.0]
    worst = 0.0
    for d in (50.0, 220.0, 500.0):
        for t_um in (100.0, 300.0):
            geom = WireGeometry(radius_d_um=d)
            slab = SensorSlab(thickness_um=t_um)
            got = depth_averaged_field(x, geom, slab, 1.0)
            want = (FIELD_COEFF_UT_UM_PER_A / t_um) * (
                np.arctan((d + t_um) / x) - np.arctan(d / x))
            worst = max(worst, float(np.max(np.abs(got - want)
                                            / np.abs(want))))
    assert worst < 1e-9
    # peak of |mean field| at sqrt(d*(d+T)) for the imaging geometry
    geom = WireGeometry(radius_d_um=220.0)
    slab = SensorSlab(thickness_um=300.0)
    xs = np.linspace(1.0, 1200.0, 4797)
    b = depth_averaged_field(xs, geom, slab, 1.0)
    k = int(np.argmax(np.abs(b)))
    x_pk, b_pk = float(xs[k]), float(b[k])
    assert abs(x_pk - math.sqrt(220.0 * 520.0)) < 1.0  # 338.2 um
    assert abs(b_pk - 278.0) < 0.5
    elapsed = time.monotonic() - t0
    assert elapsed < 1.0
    print(f"criterion 3 PASS: worst rel err {worst:.2e}, peak "
          f"{b_pk:.2f} uT at {x_pk:.1f} um, {elapsed:.2f} s")


def test_criterion_04_wire_map_round_trip():
    t0 = time.monotonic()
    cfg = load("wire_map.json")
    scene = cfgmod.build_scene(cfg)
    spin = cfgmod.build_spin(cfg)
    stack = synth_spectrum_stack(scene, spin, cfgmod.sweep_mhz(cfg), "am",
                                 cfgmod.build_timing(cfg),
                                 cfgmod.build_noise(cfg,
                                                    cfgmod.resolve_seed(cfg)),
                                 threads=4)
    binned = bin_frames(stack, cfg["recon"]["bin_factor"])
    grid = fit_spectrum_grid(binned, threads=4)
    valid = threshold_mask(grid, cfg["recon"]["snr_min"],
                           cfg["recon"]["stderr_max_mhz"])
    x, y = virtual_coords_um(binned.metadata)
    fmap = map_from_fits(grid, spin, stack.metadata["protocol"]["nu1_ref_mhz"],
                         valid, x, y, cfg["recon"]["bin_factor"])
    px, prof = profile_across_wire(fmap)
    fit = fit_wire_profile(px, prof, scene.slab.thickness_um)
    elapsed = time.monotonic() - t0
    assert abs(abs(fit.i_hat_a) - 1.0) <= 0.04
    assert abs(fit.d_hat_um - 220.0) <= 4.0
    # interpolated zero crossing lands within one virtual pixel of the wire
    sign = np.flatnonzero(prof[:-1] * prof[1:] < 0)
    assert sign.size > 0
    j = sign[np.argmin(np.abs(px[sign] - 36.0))]
    x_cross = px[j] - prof[j] * (px[j + 1] - px[j]) / (prof[j + 1] - prof[j])
    pitch_v = (cfg["recon"]["bin_factor"]
               * cfg["scene"]["slab"]["pixel_pitch_um"])
    assert abs(x_cross - 36.0) <= pitch_v
    assert elapsed < 60.0
    print(f"criterion 4 PASS: I {fit.i_hat_a:+.4f} A, d {fit.d_hat_um:.2f} "
          f"um, crossing {x_cross:.1f} um, {elapsed:.1f} s")


def test_criterion_05_dual_drive_properties():
    t0 = time.monotonic()
    spin = SpinSystem(linewidth_sigma_mhz=5.876)
    bias = 15.375
    nu1, nu2 = odmr_frequencies(spin, bias)
    d1, d2 = nu1 + 4.27, nu2 + 4.27
    h = 1e-4  # mT
    dual = (dual_fm_response(spin, d1, d2, bias + h)
            - dual_fm_response(spin, d1, d2, bias - h))
    single = float(single_fm_response(spin, np.array([d1]), bias + h)[0]
                   - single_fm_response(spin, np.array([d1]), bias - h)[0])
    assert abs(dual / single - 2.0) <= 1e-9
    # splitting-shift rejection: response change per MHz of splitting shift
    # over response change per MHz of Zeeman shift
    num = abs(dual_fm_response(spin, d1, d2, bias, d_shift_mhz=0.05)
              - dual_fm_response(spin, d1, d2, bias, d_shift_mhz=-0.05))
    den = abs(dual_fm_response(spin, d1, d2, bias + 0.05 / 28.0)
              - dual_fm_response(spin, d1, d2, bias - 0.05 / 28.0))
    ratio = num / den
    assert ratio < 1e-6
    proto = DualFmProtocol(spin=spin, bias_mt=bias, detuning_mhz=4.27)
    curve = build_calibration(proto, -500.0, 500.0, n_samples=2001)
    asym = curve.sensing_hi_ut / abs(curve.sensing_lo_ut)
    assert asym > 3.0
    elapsed = time.monotonic() - t0
    assert elapsed < 1.0
    print(f"criterion 5 PASS: doubling exact, rejection ratio {ratio:.1e}, "
          f"window ({curve.sensing_lo_ut:.1f}, {curve.sensing_hi_ut:.1f}) "
          f"uT, asymmetry {asym:.2f}")


def test_criterion_06_pulse_round_trip():
    t0 = time.monotonic()
    cfg = load("pulse_dual_fm.json")
    scene = cfgmod.build_scene(cfg)
    spin = cfgmod.build_spin(cfg)
    proto = cfgmod.build_protocol(cfg, spin, scene)
    timing = cfgmod.build_timing(cfg)
    stack = synth_timeseries_stack(scene, spin, proto, timing,
                                   cfgmod.build_noise(
                                       cfg, cfgmod.resolve_seed(cfg)),
                                   drift=cfgmod.build_drift(cfg), threads=4)
    span = cfg["recon"]["calibration_span_ut"]
    curve = build_calibration(proto, span[0], span[1],
                              cfg["recon"]["calibration_samples"])
    binned = bin_frames(stack, cfg["recon"]["bin_factor"])
    fields, clipped = reconstruct_timeseries(binned, curve)
    x, _ = virtual_coords_um(binned.metadata)

    # pulse 400-500 ms covers the frames whose midpoints fall inside
    mid = binned.timestamps_ms
    cur = cfg["scene"]["current"]
    on = {k for k in range(binned.n_frames)
          if cur["t_start_ms"] <= mid[k] < cur["t_start_ms"]
          + cur["duration_ms"]}
    assert on == {8, 9}

    # right-of-wire column near the positive lobe steps exactly there
    j_right = int(np.argmin(np.abs(x - 37.5)))
    trace = np.nanmean(fields[:, :, j_right], axis=1)
    stepped = {k for k in range(trace.size)
               if abs(trace[k]) > 0.5 * np.abs(trace).max()}
    assert stepped == on

    # directly under the wire the projected field cancels
    j_mid = int(np.argmin(np.abs(x)))
    assert x[j_mid] == 0.0
    below = float(np.nanmean(fields[:, :, j_mid]))
    assert abs(below) < 3.0 / math.sqrt(binned.n_frames)  # 1 uT floor

    # the left lobe exceeds the window during the pulse: clamps at the edge
    k, r, c = np.nonzero(clipped)
    assert k.size > 0
    assert set(k.tolist()) <= on
    assert np.allclose(fields[k, r, c], curve.sensing_lo_ut, atol=1e-9)
    assert abs(curve.sensing_lo_ut + 75.0) < 0.5

    # current inference, dropping any column with a clipped pulse sample
    on_idx = sorted(on)
    during = fields[on_idx].mean(axis=0)
    col_ok = ~clipped[on_idx].any(axis=(0, 1))
    ref = depth_averaged_field(x, scene.geom, scene.slab, 1.0)
    i_ma = infer_pulse_current(during.mean(axis=0), ref, 1.0,
                               valid=col_ok)
    assert abs(i_ma - 35.0) / 35.0 < 0.10
    elapsed = time.monotonic() - t0
    assert elapsed < 120.0
    print(f"criterion 6 PASS: step frames {sorted(stepped)}, below-wire "
          f"{below:+.3f} uT, {k.size} clipped at {curve.sensing_lo_ut:.2f} "
          f"uT, current {i_ma:.2f} mA, {elapsed:.1f} s")


def test_criterion_07_gslac_suite():
    t0 = time.monotonic()
    proto_default = GslacProtocol(model=GslacModel(), bias_mt=1.25)
    curve = build_calibration(proto_default, -150.0, 150.0, n_samples=2001)
    assert abs(curve.sensing_lo_ut + 39.3) < 1.0
    assert abs(curve.sensing_hi_ut - 39.3) < 1.0
    width_mhz = 28.0 * (curve.sensing_hi_ut - curve.sensing_lo_ut) * 1e-3
    assert abs(width_mhz - 2.2) / 2.2 < 0.05

    cfg = load("gslac_current.json")
    scene = cfgmod.build_scene(cfg)
    spin = cfgmod.build_spin(cfg)
    proto = cfgmod.build_protocol(cfg, spin, scene)
    stack = synth_timeseries_stack(scene, spin, proto,
                                   cfgmod.build_timing(cfg),
                                   cfgmod.build_noise(
                                       cfg, cfgmod.resolve_seed(cfg)),
                                   threads=4)
    span = cfg["recon"]["calibration_span_ut"]
    ccfg = build_calibration(proto, span[0], span[1],
                             cfg["recon"]["calibration_samples"])
    binned = bin_frames(stack, cfg["recon"]["bin_factor"])
    fields, clipped = reconstruct_timeseries(binned, ccfg)
    x, _ = virtual_coords_um(binned.metadata)
    mean_map = fields.mean(axis=0)
    keep = ~clipped.any(axis=0)
    ref = np.broadcast_to(depth_averaged_field(x, scene.geom, scene.slab,
                                               1.0), mean_map.shape)
    i_ma = infer_pulse_current(mean_map, ref, 1.0, valid=keep)
    assert abs(i_ma - 100.0) / 100.0 < 0.10
    elapsed = time.monotonic() - t0
    assert elapsed < 30.0
    print(f"criterion 7 PASS: window ({curve.sensing_lo_ut:.2f}, "
          f"{curve.sensing_hi_ut:.2f}) uT, width {width_mhz:.4f} MHz, "
          f"current {i_ma:.2f} mA, {elapsed:.1f} s")


def test_criterion_08_sensitivity():
    t0 = time.monotonic()
    sens = sensitivity_report(1.0, 50.0, 100)
    assert sens == math.sqrt(5.0)
    assert round(sens, 3) == 2.236

    # Monte Carlo: a zero-current scene holds every pixel at the operating
    # point; the reconstructed per-pixel trace noise must match the
    # per-frame signal noise divided by the response slope there
    cfg = load("pulse_dual_fm.json")
    cfg["scene"]["current"]["amplitude_ma"] = 0.0
    cfg["timing"]["n_frames"] = 64
    scene = cfgmod.build_scene(cfg)
    spin = cfgmod.build_spin(cfg)
    proto = cfgmod.build_protocol(cfg, spin, scene)
    timing = cfgmod.build_timing(cfg)
    noise = cfgmod.build_noise(cfg, seed=42)
    curve = build_calibration(proto, -500.0, 500.0, n_samples=2001)
    stack = synth_timeseries_stack(scene, spin, proto, timing, noise,
                                   threads=4)
    fields, _ = reconstruct_timeseries(bin_frames(stack, 5), curve)
    measured = float(fields.std(axis=0, ddof=1).mean())
    h = 1e-3
    slope = abs(float(proto.signal(np.array([h]))[0]
                      - proto.signal(np.array([-h]))[0])) / (2.0 * h)
    predicted = noise.per_frame_sigma(timing) / 5.0 / slope
    assert abs(measured - predicted) / predicted < 0.10
    sens_mc = sensitivity_report(measured, timing.frame_period_ms,
                                 timing.n_sequences)
    assert abs(sens_mc - math.sqrt(5.0)) / math.sqrt(5.0) < 0.10
    elapsed = time.monotonic() - t0
    print(f"criterion 8 PASS: arithmetic {sens:.6f}, MC floor "
          f"{measured:.3f} uT vs {predicted:.3f} predicted, MC sensitivity "
          f"{sens_mc:.3f} uT/sqrt(Hz), {elapsed:.1f} s")


def test_criterion_09_stderr_calibration():
    rng = np.random.default_rng(2024)
    freqs = np.linspace(393.0, 433.0, 41)
    errs = []
    for _ in range(200):
        sig = (gaussian_peak(freqs, 413.0, 8.0, -0.003)
               + rng.normal(0, 2e-4, freqs.size))
        r = fit_gaussian(freqs, sig, shape="peak")
        assert r.converged and np.isfinite(r.center_stderr_mhz)
        errs.append((r.center_mhz - 413.0) / r.center_stderr_mhz)
    errs_fm = []
    for _ in range(200):
        sig = (fm_difference(freqs, 413.0, 8.0, -0.003)
               + rng.normal(0, 2e-4, freqs.size))
        r = fit_gaussian(freqs, sig, shape="fm_difference", fm_depth_mhz=4.0)
        assert r.converged and np.isfinite(r.center_stderr_mhz)
        errs_fm.append((r.center_mhz - 413.0) / r.center_stderr_mhz)
    std_peak = float(np.std(errs, ddof=1))
    std_fm = float(np.std(errs_fm, ddof=1))
    assert 0.7 <= std_peak <= 1.4
    assert 0.7 <= std_fm <= 1.4
    print(f"criterion 9 PASS: normalized-error std {std_peak:.3f} (peak), "
          f"{std_fm:.3f} (fm), 200 trials each")


def test_criterion_10_cli_thread_determinism(tmp_path):
    t0 = time.monotonic()
    small = json.loads((CONFIGS / "wire_map.json").read_text())
    small["scene"]["slab"]["width_px"] = 128
    small["scene"]["slab"]["height_px"] = 136
    (tmp_path / "small.json").write_text(json.dumps(small))
    pulse = json.loads((CONFIGS / "pulse_dual_fm.json").read_text())
    pulse["timing"]["n_frames"] = 12
    (tmp_path / "pulse.json").write_text(json.dumps(pulse))

    def cli(*args):
        proc = subprocess.run([sys.executable, "-m", "qscm", *args],
                              cwd=tmp_path, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        return proc

    outputs = []
    for threads in ("1", "8"):
        tag = f"t{threads}"
        cli("spectrum", "--config", "small.json",
            "--out", f"spec_{tag}.qscm", "--threads", threads)
        cli("fitmap", "--in", f"spec_{tag}.qscm",
            "--out", f"map_{tag}.csv", "--threads", threads)
        cli("synth", "--config", "pulse.json",
            "--out", f"pulse_{tag}.qscm", "--threads", threads)
        cli("calibrate", "--config", "pulse.json", "--out", f"cal_{tag}.json")
        cli("recon", "--in", f"pulse_{tag}.qscm", "--cal", f"cal_{tag}.json",
            "--out", f"traces_{tag}.csv", "--map-frame", "8",
            "--out-map", f"pmap_{tag}.csv")
        cli("fit-current", "--map", f"map_{tag}.csv",
            "--out", f"fit_{tag}.json")
        outputs.append([f"spec_{tag}.qscm", f"map_{tag}.csv",
                        f"map_{tag}.csv.json", f"pulse_{tag}.qscm",
                        f"cal_{tag}.json", f"traces_{tag}.csv",
                        f"pmap_{tag}.csv", f"pmap_{tag}.csv.json",
                        f"fit_{tag}.json"])
    for a, b in zip(*outputs):
        ba = (tmp_path / a).read_bytes()
        bb = (tmp_path / b).read_bytes()
        assert ba == bb, f"{a} != {b}"
    elapsed = time.monotonic() - t0
    print(f"criterion 10 PASS: {len(outputs[0])} outputs byte-identical "
          f"across --threads 1/8, {elapsed:.1f} s")

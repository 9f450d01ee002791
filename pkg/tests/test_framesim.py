"""Lock-in frame synthesis: timing, noise statistics, determinism, drift."""
import numpy as np
import pytest

from qscm.errors import ConfigInvalid, ShapeMismatch
from qscm.framesim import (DriftArtifact, FrameStack, NoiseModel,
                           TimingConfig, demodulate, synth_spectrum_stack,
                           synth_timeseries_stack)
from qscm.spin import DualFmProtocol, SpinSystem, odmr_frequencies
from qscm.wirefield import (CurrentWaveform, Scene, SensorSlab, WireGeometry,
                            depth_averaged_field)


def small_scene(amplitude_ma=-1000.0, kind="dc", **wf):
    return Scene(geom=WireGeometry(radius_d_um=220.0, x0_um=36.0),
                 slab=SensorSlab(width_px=24, height_px=10),
                 bias_mt=963.0 / 56.0,
                 waveform=CurrentWaveform(kind=kind, amplitude_ma=amplitude_ma,
                                          **wf))


def test_timing_defaults_and_period():
    t = TimingConfig()
    assert t.frame_period_ms == 50.0  # 100 cycles at 2 kHz
    stamps = t.timestamps_ms(4)
    assert np.array_equal(stamps, [25.0, 75.0, 125.0, 175.0])


def test_timing_validation():
    with pytest.raises(ConfigInvalid):
        TimingConfig(mod_freq_hz=0.0)
    with pytest.raises(ConfigInvalid):
        TimingConfig(n_cycle=0)
    with pytest.raises(ConfigInvalid):
        TimingConfig(trigger_delay_ms=-1.0)


def test_noise_per_frame_sigma():
    noise = NoiseModel(sigma_per_cycle=0.006817, seed=0)
    timing = TimingConfig(n_cycle=100, n_sequences=100)
    assert noise.per_frame_sigma(timing) == pytest.approx(6.817e-5, rel=1e-12)
    with pytest.raises(ConfigInvalid):
        NoiseModel(sigma_per_cycle=-0.1)


def test_drift_offsets_forms():
    drift = DriftArtifact(enabled=True, delta_f_hz=0.35, amplitude=0.002)
    t_ms = np.array([0.0, 500.0, 1000.0 / 0.35 / 2.0])
    di, dq = drift.offsets(t_ms)
    phase = 2.0 * np.pi * 0.35 * (t_ms / 1000.0)
    assert np.allclose(di, 0.002 * (1.0 - np.cos(phase)), atol=1e-18)
    assert np.allclose(dq, 0.002 * np.sin(phase), atol=1e-18)
    assert di[0] == 0.0 and dq[0] == 0.0
    assert di[2] == pytest.approx(0.004)  # half a beat period in, cos = -1


def test_demodulate():
    a = np.arange(6.0).reshape(2, 3)
    i, q = demodulate(a + 1.0, a, a + 0.5, a)
    assert np.array_equal(i, np.ones((2, 3)))
    assert np.array_equal(q, np.full((2, 3), 0.5))
    with pytest.raises(ShapeMismatch):
        demodulate(a, a, a, np.zeros((3, 2)))


def test_frame_stack_validation():
    planes = np.zeros((3, 4, 5), dtype=np.float32)
    stamps = np.array([25.0, 75.0, 125.0])
    stack = FrameStack(width=5, height=4, i_planes=planes, q_planes=planes,
                       timestamps_ms=stamps, metadata={})
    assert stack.n_frames == 3
    with pytest.raises(ShapeMismatch):
        FrameStack(width=6, height=4, i_planes=planes, q_planes=planes,
                   timestamps_ms=stamps, metadata={})
    with pytest.raises(ConfigInvalid):
        FrameStack(width=5, height=4, i_planes=planes, q_planes=planes,
                   timestamps_ms=stamps[::-1].copy(), metadata={})


def test_spectrum_stack_noiseless_matches_response():
    scene = small_scene()
    spin = SpinSystem()
    sweep = np.linspace(386.5, 436.5, 12)
    timing = TimingConfig(n_frames=1)
    stack = synth_spectrum_stack(scene, spin, sweep, "am", timing,
                                 NoiseModel())
    assert stack.n_frames == 12
    assert stack.metadata["kind"] == "spectrum"
    assert stack.metadata["protocol"]["kind"] == "am"
    # Q plane carries nothing without noise or drift
    assert np.all(stack.q_planes == 0.0)
    # pick a pixel and rebuild its expected spectrum
    col, row = 7, 3
    x = scene.slab.x_coords_um()[col]
    b_off = depth_averaged_field(float(x), scene.geom, scene.slab, -1.0)
    from qscm.spin import single_am_response
    want = single_am_response(spin, sweep, scene.bias_mt + b_off / 1000.0)
    got = stack.i_planes[:, row, col].astype(float)
    assert np.abs(got - want).max() < 1e-7  # float32 storage


def test_spectrum_stack_sweep_validation():
    scene = small_scene()
    spin = SpinSystem()
    with pytest.raises(ConfigInvalid):
        synth_spectrum_stack(scene, spin, np.array([]), "am", TimingConfig(),
                             NoiseModel())
    with pytest.raises(ConfigInvalid):
        synth_spectrum_stack(scene, spin, np.array([400.0, 399.0]), "am",
                             TimingConfig(), NoiseModel())
    with pytest.raises(ConfigInvalid):
        synth_spectrum_stack(scene, spin, np.array([400.0, 401.0]), "pm",
                             TimingConfig(), NoiseModel())


def test_noise_scaling_with_sequences():
    scene = small_scene()
    spin = SpinSystem()
    sweep = np.linspace(386.5, 436.5, 8)
    quiet = synth_spectrum_stack(scene, spin, sweep, "am",
                                 TimingConfig(n_sequences=1), NoiseModel())
    noisy1 = synth_spectrum_stack(scene, spin, sweep, "am",
                                  TimingConfig(n_sequences=1),
                                  NoiseModel(sigma_per_cycle=0.015, seed=1))
    noisy4 = synth_spectrum_stack(scene, spin, sweep, "am",
                                  TimingConfig(n_sequences=4),
                                  NoiseModel(sigma_per_cycle=0.015, seed=1))
    sigma1 = (noisy1.i_planes - quiet.i_planes).astype(float).std()
    sigma4 = (noisy4.i_planes - quiet.i_planes).astype(float).std()
    assert sigma1 == pytest.approx(0.0015, rel=0.05)
    assert sigma4 == pytest.approx(0.00075, rel=0.05)


def test_determinism_and_thread_independence():
    scene = small_scene()
    spin = SpinSystem()
    sweep = np.linspace(386.5, 436.5, 8)
    noise = NoiseModel(sigma_per_cycle=0.015, seed=42)
    a = synth_spectrum_stack(scene, spin, sweep, "am", TimingConfig(), noise)
    b = synth_spectrum_stack(scene, spin, sweep, "am", TimingConfig(), noise)
    c = synth_spectrum_stack(scene, spin, sweep, "am", TimingConfig(), noise,
                             threads=4)
    assert np.array_equal(a.i_planes, b.i_planes)
    assert np.array_equal(a.q_planes, b.q_planes)
    assert np.array_equal(a.i_planes, c.i_planes)
    assert np.array_equal(a.q_planes, c.q_planes)
    d = synth_spectrum_stack(scene, spin, sweep, "am", TimingConfig(),
                             NoiseModel(sigma_per_cycle=0.015, seed=43))
    assert not np.array_equal(a.i_planes, d.i_planes)


def test_timeseries_stack_pulse_and_metadata():
    scene = small_scene(amplitude_ma=35.0, kind="pulse", t_start_ms=100.0,
                        duration_ms=100.0)
    spin = SpinSystem(linewidth_sigma_mhz=5.876)
    proto = DualFmProtocol(spin=spin, bias_mt=scene.bias_mt,
                           detuning_mhz=4.27)
    timing = TimingConfig(n_frames=6)
    stack = synth_timeseries_stack(scene, spin, proto, timing, NoiseModel())
    assert stack.metadata["kind"] == "timeseries"
    assert stack.metadata["protocol"]["kind"] == "dual_fm"
    nu1, nu2 = odmr_frequencies(spin, scene.bias_mt)
    drives = stack.metadata["protocol"]["drives_mhz"]
    assert drives[0] == pytest.approx(nu1 + 4.27)
    assert drives[1] == pytest.approx(nu2 + 4.27)
    assert np.array_equal(stack.timestamps_ms,
                          [25.0, 75.0, 125.0, 175.0, 225.0, 275.0])
    # pulse covers frames with midpoints 125 and 175 only
    on = {2, 3}
    for k in range(6):
        same_as_first = np.array_equal(stack.i_planes[k], stack.i_planes[0])
        assert same_as_first == (k not in on)


def test_timeseries_drift_moves_both_planes():
    scene = small_scene(amplitude_ma=0.0)
    spin = SpinSystem(linewidth_sigma_mhz=5.876)
    proto = DualFmProtocol(spin=spin, bias_mt=scene.bias_mt,
                           detuning_mhz=4.27)
    timing = TimingConfig(n_frames=4, trigger_delay_ms=500.0)
    drift = DriftArtifact(enabled=True, delta_f_hz=0.35, amplitude=0.002)
    plain = synth_timeseries_stack(scene, spin, proto, timing, NoiseModel())
    moved = synth_timeseries_stack(scene, spin, proto, timing, NoiseModel(),
                                   drift=drift)
    t = (500.0 + timing.timestamps_ms(4)) / 1000.0
    want_i = 0.002 * (1.0 - np.cos(2.0 * np.pi * 0.35 * t))
    want_q = 0.002 * np.sin(2.0 * np.pi * 0.35 * t)
    for k in range(4):
        di = (moved.i_planes[k] - plain.i_planes[k]).astype(float)
        dq = (moved.q_planes[k] - plain.q_planes[k]).astype(float)
        assert np.abs(di - want_i[k]).max() < 1e-7
        assert np.abs(dq - want_q[k]).max() < 1e-7

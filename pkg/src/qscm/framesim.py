"""Synthesis of demodulated lock-in camera frame stacks.

Each frame integrates n_cycle modulation cycles and carries one in-phase
and one quadrature plane.  The synthesizer evaluates the protocol's forward
response at every pixel's depth-averaged field, adds white Gaussian noise
at the per-frame level sigma_per_cycle/sqrt(n_cycle*n_sequences), and
optionally injects a slow baseline-drift artifact tied to the time since
the hardware trigger.

Noise is counter-based: frame k of a run seeded with s draws from a Philox
stream keyed (s, k), so stacks are bit-identical no matter how synthesis
work is scheduled across threads.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigInvalid, ShapeMismatch
from .spin import SpinSystem, odmr_frequencies, single_am_response, single_fm_response
from .wirefield import Scene, depth_averaged_field

FORMAT_VERSION = 1


@dataclass(frozen=True)
class TimingConfig:
    """Lock-in and sequence timing; frame_period = n_cycle / mod_freq."""

    mod_freq_hz: float = 2000.0
    n_cycle: int = 100
    n_frames: int = 1
    n_sequences: int = 1
    trigger_delay_ms: float = 0.0

    def __post_init__(self) -> None:
        if self.mod_freq_hz <= 0:
            raise ConfigInvalid("timing.mod_freq_hz: must be > 0")
        if self.n_cycle < 1:
            raise ConfigInvalid("timing.n_cycle: must be >= 1")
        if self.n_frames < 1:
            raise ConfigInvalid("timing.n_frames: must be >= 1")
        if self.n_sequences < 1:
            raise ConfigInvalid("timing.n_sequences: must be >= 1")
        if self.trigger_delay_ms < 0:
            raise ConfigInvalid("timing.trigger_delay_ms: must be >= 0")

    @property
    def frame_period_ms(self) -> float:
        return self.n_cycle / self.mod_freq_hz * 1000.0

    def timestamps_ms(self, n_frames: Optional[int] = None) -> np.ndarray:
        """Frame midpoints relative to acquisition start."""
        n = self.n_frames if n_frames is None else n_frames
        return (np.arange(n) + 0.5) * self.frame_period_ms


@dataclass(frozen=True)
class NoiseModel:
    """Additive white Gaussian noise in demodulated lock-in units."""

    sigma_per_cycle: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.sigma_per_cycle < 0:
            raise ConfigInvalid("noise.sigma_per_cycle: must be >= 0")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigInvalid("noise.seed: must fit in 64 bits")

    def per_frame_sigma(self, timing: TimingConfig) -> float:
        return self.sigma_per_cycle / np.sqrt(timing.n_cycle * timing.n_sequences)


@dataclass(frozen=True)
class DriftArtifact:
    """Slow baseline drift from a modulation/demodulation frequency mismatch.

    When enabled, the in-phase plane gains amplitude*(1 - cos(2 pi delta_f
    t)) and the quadrature plane gains amplitude*sin(2 pi delta_f t), with t
    the elapsed time since the trigger (trigger delay plus frame midpoint).
    The accumulating phase error shows up first in Q, then bleeds into I.
    """

    enabled: bool = False
    delta_f_hz: float = 0.0
    amplitude: float = 0.0

    def offsets(self, t_since_trigger_ms):
        phase = 2.0 * np.pi * self.delta_f_hz * (
            np.asarray(t_since_trigger_ms, dtype=float) / 1000.0)
        return self.amplitude * (1.0 - np.cos(phase)), self.amplitude * np.sin(phase)


@dataclass
class FrameStack:
    """A demodulated image sequence plus the description that produced it.

    i_planes and q_planes have shape (n_frames, height, width); timestamps
    are frame midpoints in ms from acquisition start, strictly increasing.
    Synthesized stacks hold float32 planes (what the camera link delivers);
    binned stacks promote to float64.
    """

    width: int
    height: int
    i_planes: np.ndarray
    q_planes: np.ndarray
    timestamps_ms: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        expect = (self.timestamps_ms.shape[0], self.height, self.width)
        if self.i_planes.shape != expect or self.q_planes.shape != expect:
            raise ShapeMismatch(
                f"plane shapes {self.i_planes.shape}/{self.q_planes.shape} "
                f"do not match (n_frames, {self.height}, {self.width})")
        if np.any(np.diff(self.timestamps_ms) <= 0):
            raise ConfigInvalid("timestamps must be strictly increasing")

    @property
    def n_frames(self) -> int:
        return int(self.timestamps_ms.shape[0])


def demodulate(i_plus, i_minus, q_plus, q_minus):
    """Half-cycle differences I = I+ - I-, Q = Q+ - Q-."""
    arrs = [np.asarray(a) for a in (i_plus, i_minus, q_plus, q_minus)]
    if not (arrs[0].shape == arrs[1].shape == arrs[2].shape == arrs[3].shape):
        raise ShapeMismatch(
            f"half-cycle shapes differ: {[a.shape for a in arrs]}")
    return arrs[0] - arrs[1], arrs[2] - arrs[3]


def _frame_noise(noise: NoiseModel, timing: TimingConfig, frame_index: int,
                 height: int, width: int):
    """(i_noise, q_noise) for one frame from its private Philox stream."""
    sigma = noise.per_frame_sigma(timing)
    if sigma == 0.0:
        zero = np.zeros((height, width))
        return zero, zero
    bitgen = np.random.Philox(key=np.array([noise.seed, frame_index],
                                           dtype=np.uint64))
    draws = np.random.Generator(bitgen).standard_normal((2, height, width))
    return sigma * draws[0], sigma * draws[1]


def _field_row_cache(scene: Scene):
    """Memoized depth-averaged field row (uT) as a function of current."""
    x = scene.slab.x_coords_um()
    cache: dict = {}

    def row(i_a: float) -> np.ndarray:
        got = cache.get(i_a)
        if got is None:
            got = depth_averaged_field(x, scene.geom, scene.slab, i_a)
            cache[i_a] = got
        return got

    return row


def _assemble(scene: Scene, timing: TimingConfig, noise: NoiseModel,
              signal_rows, drift: Optional[DriftArtifact],
              timestamps: np.ndarray, metadata: dict,
              threads: int = 1) -> FrameStack:
    """Broadcast per-frame signal rows to planes, add noise and drift.

    Frames are independent (each owns a Philox stream keyed by its index),
    so parallel assembly writes disjoint slots and the result is identical
    for any thread count.
    """
    h, w = scene.slab.height_px, scene.slab.width_px
    n = timestamps.shape[0]
    i_planes = np.empty((n, h, w), dtype=np.float32)
    q_planes = np.empty((n, h, w), dtype=np.float32)

    def build_frame(k: int) -> None:
        sig = np.broadcast_to(signal_rows[k], (h, w))
        ni, nq = _frame_noise(noise, timing, k, h, w)
        di = dq = 0.0
        if drift is not None and drift.enabled:
            di, dq = drift.offsets(timing.trigger_delay_ms + timestamps[k])
        i_planes[k] = (sig + ni + di).astype(np.float32)
        q_planes[k] = (nq + dq).astype(np.float32)

    if threads <= 1:
        for k in range(n):
            build_frame(k)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(build_frame, range(n)))
    return FrameStack(width=w, height=h, i_planes=i_planes, q_planes=q_planes,
                      timestamps_ms=timestamps, metadata=metadata)


def _scene_meta(scene: Scene) -> dict:
    return {
        "wire": {"radius_d_um": scene.geom.radius_d_um,
                 "x0_um": scene.geom.x0_um,
                 "standoff_um": scene.geom.standoff_um,
                 "axis": scene.geom.axis},
        "slab": {"thickness_um": scene.slab.thickness_um,
                 "pixel_pitch_um": scene.slab.pixel_pitch_um,
                 "width_px": scene.slab.width_px,
                 "height_px": scene.slab.height_px},
        "bias_mt": scene.bias_mt,
        "current": {"kind": scene.waveform.kind,
                    "amplitude_ma": scene.waveform.amplitude_ma,
                    "t_start_ms": scene.waveform.t_start_ms,
                    "duration_ms": scene.waveform.duration_ms},
    }


def _spin_meta(spin: SpinSystem) -> dict:
    return {"gamma_mhz_per_mt": spin.gamma_mhz_per_mt,
            "two_d_mhz": spin.two_d_mhz,
            "contrast": spin.contrast,
            "linewidth_sigma_mhz": spin.linewidth_sigma_mhz}


def _timing_meta(timing: TimingConfig) -> dict:
    return {"mod_freq_hz": timing.mod_freq_hz, "n_cycle": timing.n_cycle,
            "n_frames": timing.n_frames, "n_sequences": timing.n_sequences,
            "trigger_delay_ms": timing.trigger_delay_ms,
            "frame_period_ms": timing.frame_period_ms}


def synth_spectrum_stack(scene: Scene, spin: SpinSystem, sweep_mhz,
                         protocol: str, timing: TimingConfig,
                         noise: NoiseModel, fm_depth_mhz: float = 4.0,
                         threads: int = 1) -> FrameStack:
    """One frame per sweep frequency; drive frequency steps between frames.

    protocol "am" gives peak-shaped per-pixel spectra (microwave on/off),
    "fm" gives derivative-shaped ones.  The wire field enters through each
    pixel's depth-averaged offset added to the scene bias.
    """
    sweep = np.asarray(sweep_mhz, dtype=float)
    if sweep.size == 0 or np.any(np.diff(sweep) <= 0):
        raise ConfigInvalid("sweep: must be nonempty and strictly increasing")
    if protocol not in ("am", "fm"):
        raise ConfigInvalid(f"protocol: spectrum kind must be am or fm, "
                            f"got '{protocol}'")
    timestamps = timing.timestamps_ms(sweep.size)
    field_row = _field_row_cache(scene)
    rows = []
    for k in range(sweep.size):
        i_a = float(scene.waveform.current_at(timestamps[k]))
        b_row_mt = scene.bias_mt + field_row(i_a) / 1000.0
        if protocol == "am":
            rows.append(single_am_response(spin, sweep[k], b_row_mt))
        else:
            rows.append(single_fm_response(spin, sweep[k], b_row_mt,
                                           fm_depth_mhz))
    nu1_ref, nu2_ref = odmr_frequencies(spin, scene.bias_mt)
    metadata = {
        "format_version": FORMAT_VERSION,
        "kind": "spectrum",
        "protocol": {"kind": protocol, "sweep_mhz": sweep.tolist(),
                     "fm_depth_mhz": fm_depth_mhz,
                     "nu1_ref_mhz": nu1_ref, "nu2_ref_mhz": nu2_ref},
        "scene": _scene_meta(scene),
        "spin": _spin_meta(spin),
        "timing": _timing_meta(timing),
        "noise": {"sigma_per_cycle": noise.sigma_per_cycle,
                  "seed": int(noise.seed)},
        "drift": {"enabled": False, "delta_f_hz": 0.0, "amplitude": 0.0},
        "provenance": {"tool": "qscm"},
    }
    return _assemble(scene, timing, noise, rows, None, timestamps, metadata,
                     threads)


def synth_timeseries_stack(scene: Scene, spin: SpinSystem, protocol,
                           timing: TimingConfig, noise: NoiseModel,
                           drift: Optional[DriftArtifact] = None,
                           threads: int = 1) -> FrameStack:
    """Fixed-drive acquisition: one frame per lock-in integration window.

    protocol is a sensing-protocol object (single_fm, dual_fm or gslac)
    whose signal(b_rel_ut) is evaluated at each pixel's sensed field for the
    wire current at the frame midpoint.  Sub-frame pulse structure is not
    integrated; pulse edges are assumed to align with frame boundaries.
    """
    timestamps = timing.timestamps_ms()
    field_row = _field_row_cache(scene)
    rows = []
    for k in range(timing.n_frames):
        i_a = float(scene.waveform.current_at(timestamps[k]))
        rows.append(np.asarray(protocol.signal(field_row(i_a)), dtype=float))
    proto_meta = {"kind": protocol.name, "bias_mt": protocol.bias_mt
                  if hasattr(protocol, "bias_mt") else scene.bias_mt}
    if hasattr(protocol, "detuning_mhz"):
        proto_meta["detuning_mhz"] = protocol.detuning_mhz
        proto_meta["fm_depth_mhz"] = protocol.fm_depth_mhz
    if protocol.name == "dual_fm":
        d1, d2 = protocol.drives_mhz
        proto_meta["drives_mhz"] = [d1, d2]
    elif protocol.name == "single_fm":
        proto_meta["drive_mhz"] = protocol.drive_mhz
    elif protocol.name == "gslac":
        m = protocol.model
        proto_meta["gslac"] = {"b_anticross_mt": m.b_anticross_mt,
                               "sigma_b_ut": m.sigma_b_ut,
                               "contrast": m.contrast,
                               "mod_depth_ut": m.mod_depth_ut,
                               "satellites": [list(p) for p in m.satellites]}
    drift_meta = {"enabled": bool(drift.enabled) if drift else False,
                  "delta_f_hz": drift.delta_f_hz if drift else 0.0,
                  "amplitude": drift.amplitude if drift else 0.0}
    metadata = {
        "format_version": FORMAT_VERSION,
        "kind": "timeseries",
        "protocol": proto_meta,
        "scene": _scene_meta(scene),
        "spin": _spin_meta(spin),
        "timing": _timing_meta(timing),
        "noise": {"sigma_per_cycle": noise.sigma_per_cycle,
                  "seed": int(noise.seed)},
        "drift": drift_meta,
        "provenance": {"tool": "qscm"},
    }
    return _assemble(scene, timing, noise, rows, drift, timestamps, metadata,
                     threads)

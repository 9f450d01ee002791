"""Run configuration: JSON schema, validation, and object builders.

Configs are plain JSON.  Validation walks a declared schema: unknown keys
are rejected, required keys reported, and every complaint carries the
dotted path of the offending field (e.g. "scene.slab.thickness_um: must be
> 0").  All physical quantities carry their unit in the field name.
"""
from __future__ import annotations

import json
import os
from typing import Optional

import numpy as np

from .errors import ConfigInvalid, IoError
from .framesim import DriftArtifact, NoiseModel, TimingConfig
from .spin import (DualFmProtocol, GslacModel, GslacProtocol,
                   SingleFmProtocol, SpinSystem)
from .wirefield import CurrentWaveform, Scene, SensorSlab, WireGeometry

_REQUIRED = object()


def _leaf(kind, default=_REQUIRED, check=None, msg=""):
    return ("leaf", kind, default, check, msg)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


_PROTOCOL_KINDS = ("single_am", "single_fm", "dual_fm", "gslac")

_SCHEMA = {
    "scene": {
        "wire": {
            "radius_d_um": _leaf("float", check=lambda v: v > 0,
                                 msg="must be > 0"),
            "x0_um": _leaf("float", 0.0),
            "standoff_um": _leaf("float", 0.0, lambda v: v >= 0,
                                 "must be >= 0"),
            "axis": _leaf("str", "along_y", lambda v: v == "along_y",
                          "only 'along_y' is supported"),
        },
        "slab": {
            "thickness_um": _leaf("float", 300.0, lambda v: v > 0,
                                  "must be > 0"),
            "pixel_pitch_um": _leaf("float", 3.0, lambda v: v > 0,
                                    "must be > 0"),
            "width_px": _leaf("int", 512, lambda v: v >= 1, "must be >= 1"),
            "height_px": _leaf("int", 542, lambda v: v >= 1, "must be >= 1"),
        },
        "bias_mt": _leaf("float", check=lambda v: v > 0, msg="must be > 0"),
        "current": {
            "kind": _leaf("str", "dc", lambda v: v in ("dc", "pulse"),
                          "must be 'dc' or 'pulse'"),
            "amplitude_ma": _leaf("float", 0.0),
            "t_start_ms": _leaf("float", 0.0, lambda v: v >= 0,
                                "must be >= 0"),
            "duration_ms": _leaf("float", 0.0, lambda v: v >= 0,
                                 "must be >= 0"),
        },
    },
    "spin": {
        "gamma_mhz_per_mt": _leaf("float", 28.0, lambda v: v > 0,
                                  "must be > 0"),
        "two_d_mhz": _leaf("float", 70.0, lambda v: v > 0, "must be > 0"),
        "contrast": _leaf("float", 0.003, lambda v: 0 < v < 1,
                          "must be in (0, 1)"),
        "linewidth_sigma_mhz": _leaf("float", 8.0, lambda v: v > 0,
                                     "must be > 0"),
    },
    "protocol": {
        "kind": _leaf("str", check=lambda v: v in _PROTOCOL_KINDS,
                      msg="must be one of " + ", ".join(_PROTOCOL_KINDS)),
        "sweep": {
            "start_mhz": _leaf("float", None),
            "stop_mhz": _leaf("float", None),
            "n_points": _leaf("int", 0, lambda v: v >= 0, "must be >= 0"),
        },
        "fm_depth_mhz": _leaf("float", 4.0, lambda v: v > 0, "must be > 0"),
        "detuning_mhz": _leaf("float", 0.0),
        "gslac": {
            "b_anticross_mt": _leaf("float", None),
            "sigma_b_ut": _leaf("float", 36.14, lambda v: v > 0,
                                "must be > 0"),
            "contrast": _leaf("float", 0.003, lambda v: 0 < v < 1,
                              "must be in (0, 1)"),
            "mod_depth_ut": _leaf("float", 25.0, lambda v: v > 0,
                                  "must be > 0"),
            "satellites": _leaf("satellites", []),
        },
    },
    "timing": {
        "mod_freq_hz": _leaf("float", 2000.0, lambda v: v > 0, "must be > 0"),
        "n_cycle": _leaf("int", 100, lambda v: v >= 1, "must be >= 1"),
        "n_frames": _leaf("int", 1, lambda v: v >= 1, "must be >= 1"),
        "n_sequences": _leaf("int", 1, lambda v: v >= 1, "must be >= 1"),
        "trigger_delay_ms": _leaf("float", 0.0, lambda v: v >= 0,
                                  "must be >= 0"),
    },
    "noise": {
        "sigma_per_cycle": _leaf("float", 0.0, lambda v: v >= 0,
                                 "must be >= 0"),
        "seed": _leaf("seed", None),
    },
    "drift": {
        "enabled": _leaf("bool", False),
        "delta_f_hz": _leaf("float", 0.0),
        "amplitude": _leaf("float", 0.0),
    },
    "recon": {
        "bin_factor": _leaf("int", 1, lambda v: v >= 1, "must be >= 1"),
        "roi": _leaf("roi", None),
        "snr_min": _leaf("float", 3.0, lambda v: v > 0, "must be > 0"),
        "stderr_max_mhz": _leaf("float", 2.0, lambda v: v > 0, "must be > 0"),
        "mode": _leaf("str", "clamp", lambda v: v in ("clamp", "strict"),
                      "must be 'clamp' or 'strict'"),
        "calibration_span_ut": _leaf("span", [-500.0, 500.0]),
        "calibration_samples": _leaf("int", 2001, lambda v: v >= 16,
                                     "must be >= 16"),
    },
}


def _coerce(kind: str, v, path: str):
    if kind == "float":
        if v is None:
            return None
        if not _is_num(v):
            raise ConfigInvalid(f"{path}: expected a number")
        return float(v)
    if kind == "int":
        if not isinstance(v, int) or isinstance(v, bool):
            raise ConfigInvalid(f"{path}: expected an integer")
        return v
    if kind == "bool":
        if not isinstance(v, bool):
            raise ConfigInvalid(f"{path}: expected true or false")
        return v
    if kind == "str":
        if not isinstance(v, str):
            raise ConfigInvalid(f"{path}: expected a string")
        return v
    if kind == "seed":
        if v is None:
            return None
        if not isinstance(v, int) or isinstance(v, bool) \
                or not 0 <= v < 2 ** 64:
            raise ConfigInvalid(f"{path}: expected an integer in [0, 2^64)")
        return v
    if kind == "roi":
        if v is None:
            return None
        if not isinstance(v, dict):
            raise ConfigInvalid(f"{path}: expected an object or null")
        want = {"x_px", "y_px", "width_px", "height_px"}
        if set(v) != want:
            raise ConfigInvalid(f"{path}: needs exactly keys "
                                f"{sorted(want)}")
        for k in ("x_px", "y_px"):
            if not isinstance(v[k], int) or v[k] < 0:
                raise ConfigInvalid(f"{path}.{k}: expected an integer >= 0")
        for k in ("width_px", "height_px"):
            if not isinstance(v[k], int) or v[k] < 1:
                raise ConfigInvalid(f"{path}.{k}: expected an integer >= 1")
        return dict(v)
    if kind == "satellites":
        if not isinstance(v, list):
            raise ConfigInvalid(f"{path}: expected a list of "
                                f"[offset_ut, rel_amplitude] pairs")
        out = []
        for i, pair in enumerate(v):
            if not (isinstance(pair, list) and len(pair) == 2
                    and all(_is_num(x) for x in pair)):
                raise ConfigInvalid(f"{path}[{i}]: expected "
                                    f"[offset_ut, rel_amplitude]")
            out.append([float(pair[0]), float(pair[1])])
        return out
    if kind == "span":
        if not (isinstance(v, list) and len(v) == 2
                and all(_is_num(x) for x in v) and v[0] < v[1]):
            raise ConfigInvalid(f"{path}: expected [lo_ut, hi_ut] with "
                                f"lo < hi")
        return [float(v[0]), float(v[1])]
    raise AssertionError(kind)


def _apply(schema: dict, cfg, path: str) -> dict:
    if not isinstance(cfg, dict):
        raise ConfigInvalid(f"{path.rstrip('.') or 'config'}: expected an object")
    for key in cfg:
        if key not in schema:
            raise ConfigInvalid(f"{path}{key}: unknown key")
    out = {}
    for key, sub in schema.items():
        p = f"{path}{key}"
        if isinstance(sub, dict):
            out[key] = _apply(sub, cfg.get(key, {}), p + ".")
            continue
        _, kind, default, check, msg = sub
        if key not in cfg:
            if default is _REQUIRED:
                raise ConfigInvalid(f"{p}: required")
            out[key] = default
            continue
        val = _coerce(kind, cfg[key], p)
        if check is not None and val is not None and not check(val):
            raise ConfigInvalid(f"{p}: {msg}")
        out[key] = val
    return out


def validate_config(raw: dict) -> dict:
    """Schema-check a raw config dict and fill defaults."""
    cfg = _apply(_SCHEMA, raw, "")
    cur = cfg["scene"]["current"]
    if cur["kind"] == "pulse" and cur["duration_ms"] <= 0:
        raise ConfigInvalid("scene.current.duration_ms: must be > 0 for pulse")
    sweep = cfg["protocol"]["sweep"]
    has_sweep = sweep["n_points"] > 0
    if has_sweep:
        if sweep["start_mhz"] is None or sweep["stop_mhz"] is None:
            raise ConfigInvalid("protocol.sweep: start_mhz and stop_mhz are "
                                "required when n_points > 0")
        if not sweep["start_mhz"] < sweep["stop_mhz"]:
            raise ConfigInvalid("protocol.sweep: start_mhz must be < stop_mhz")
        if sweep["n_points"] < 2:
            raise ConfigInvalid("protocol.sweep.n_points: must be >= 2")
    if cfg["protocol"]["kind"] == "single_am" and not has_sweep:
        raise ConfigInvalid("protocol.sweep: required for single_am "
                            "(spectrum-only protocol)")
    return cfg


def load_config(path: str) -> dict:
    """Read and validate a JSON config file."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"{path}: not valid JSON: {exc}") from exc
    return validate_config(raw)


def resolve_seed(cfg: dict, override: Optional[int] = None) -> int:
    """Seed precedence: CLI flag, then config, then QSCM_SEED, then 0."""
    if override is not None:
        return override
    if cfg["noise"]["seed"] is not None:
        return cfg["noise"]["seed"]
    env = os.environ.get("QSCM_SEED")
    if env is not None:
        try:
            seed = int(env)
        except ValueError:
            raise ConfigInvalid(f"QSCM_SEED: not an integer: {env!r}")
        if not 0 <= seed < 2 ** 64:
            raise ConfigInvalid("QSCM_SEED: must be in [0, 2^64)")
        return seed
    return 0


def build_scene(cfg: dict) -> Scene:
    w = cfg["scene"]["wire"]
    s = cfg["scene"]["slab"]
    c = cfg["scene"]["current"]
    return Scene(
        geom=WireGeometry(radius_d_um=w["radius_d_um"], x0_um=w["x0_um"],
                          standoff_um=w["standoff_um"], axis=w["axis"]),
        slab=SensorSlab(thickness_um=s["thickness_um"],
                        pixel_pitch_um=s["pixel_pitch_um"],
                        width_px=s["width_px"], height_px=s["height_px"]),
        bias_mt=cfg["scene"]["bias_mt"],
        waveform=CurrentWaveform(kind=c["kind"],
                                 amplitude_ma=c["amplitude_ma"],
                                 t_start_ms=c["t_start_ms"],
                                 duration_ms=c["duration_ms"]))


def build_spin(cfg: dict) -> SpinSystem:
    s = cfg["spin"]
    return SpinSystem(gamma_mhz_per_mt=s["gamma_mhz_per_mt"],
                      two_d_mhz=s["two_d_mhz"], contrast=s["contrast"],
                      linewidth_sigma_mhz=s["linewidth_sigma_mhz"])


def build_timing(cfg: dict) -> TimingConfig:
    t = cfg["timing"]
    return TimingConfig(mod_freq_hz=t["mod_freq_hz"], n_cycle=t["n_cycle"],
                        n_frames=t["n_frames"],
                        n_sequences=t["n_sequences"],
                        trigger_delay_ms=t["trigger_delay_ms"])


def build_noise(cfg: dict, seed: int) -> NoiseModel:
    return NoiseModel(sigma_per_cycle=cfg["noise"]["sigma_per_cycle"],
                      seed=seed)


def build_drift(cfg: dict) -> DriftArtifact:
    d = cfg["drift"]
    return DriftArtifact(enabled=d["enabled"], delta_f_hz=d["delta_f_hz"],
                         amplitude=d["amplitude"])


def sweep_mhz(cfg: dict):
    """The sweep frequencies, or None when the config defines none."""
    sw = cfg["protocol"]["sweep"]
    if sw["n_points"] == 0:
        return None
    return np.linspace(sw["start_mhz"], sw["stop_mhz"], sw["n_points"])


def build_gslac_model(cfg: dict, spin: SpinSystem) -> GslacModel:
    g = cfg["protocol"]["gslac"]
    center = g["b_anticross_mt"]
    if center is None:
        center = spin.gslac2_mt
    return GslacModel(b_anticross_mt=center, sigma_b_ut=g["sigma_b_ut"],
                      contrast=g["contrast"], mod_depth_ut=g["mod_depth_ut"],
                      satellites=tuple(tuple(p) for p in g["satellites"]))


def build_protocol(cfg: dict, spin: SpinSystem, scene: Scene):
    """Fixed-drive protocol object for timeseries synthesis/calibration.

    Spectrum kinds (single_am, or single_fm with a sweep) have no fixed
    operating point; callers use sweep_mhz() and the spectrum synthesizer
    for those.
    """
    kind = cfg["protocol"]["kind"]
    if kind == "single_fm":
        return SingleFmProtocol(spin=spin, bias_mt=scene.bias_mt,
                                detuning_mhz=cfg["protocol"]["detuning_mhz"],
                                fm_depth_mhz=cfg["protocol"]["fm_depth_mhz"])
    if kind == "dual_fm":
        return DualFmProtocol(spin=spin, bias_mt=scene.bias_mt,
                              detuning_mhz=cfg["protocol"]["detuning_mhz"],
                              fm_depth_mhz=cfg["protocol"]["fm_depth_mhz"])
    if kind == "gslac":
        return GslacProtocol(model=build_gslac_model(cfg, spin),
                             bias_mt=scene.bias_mt)
    raise ConfigInvalid(f"protocol.kind: '{kind}' has no fixed operating "
                        f"point; configure a sweep and use the spectrum path")

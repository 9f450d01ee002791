"""Reconstruction: binning, per-pixel fitting, masking, maps, traces, and
the wire-current inverse problem.

Everything here treats virtual pixels independently (no spatial
regularization); parallel fitting is over rows with disjoint output slots,
so results do not depend on scheduling.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (ConfigInvalid, EmptyRoi, NoReference, ProtocolMismatch,
                     SignAmbiguity)
from .fitting import FitResult, fit_gaussian, levenberg_marquardt
from .framesim import FrameStack
from .spin import CalibrationCurve, SpinSystem, frequency_to_sensed_field, invert_calibration
from .wirefield import _QUAD_NODES, _QUAD_WEIGHTS, FIELD_COEFF_UT_UM_PER_A


@dataclass
class FieldMap:
    """Sensed-field image on the virtual-pixel grid.

    values holds uT with NaN at excluded pixels; valid marks pixels that
    survived the threshold filter; clipped marks calibration-mode pixels
    whose signal fell outside the sensing interval.  x_um/y_um are the
    virtual pixel center coordinates.
    """

    values: np.ndarray
    valid: np.ndarray
    clipped: np.ndarray
    bin_factor: int
    x_um: np.ndarray
    y_um: np.ndarray

    def __post_init__(self) -> None:
        if not (self.values.shape == self.valid.shape == self.clipped.shape):
            raise ConfigInvalid("field map arrays must share one shape")
        if self.values.shape != (self.y_um.size, self.x_um.size):
            raise ConfigInvalid("field map axes do not match the value grid")

    @property
    def height_v(self) -> int:
        return self.values.shape[0]

    @property
    def width_v(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class WireFit:
    """Wire depth and current recovered from a field profile."""

    d_hat_um: float
    i_hat_a: float
    x0_um: float
    d_stderr_um: float
    i_stderr_a: float
    residual_rms_ut: float


def bin_frames(stack: FrameStack, bin_factor: int,
               roi: Optional[tuple] = None) -> FrameStack:
    """Average bin_factor x bin_factor raw pixels into virtual pixels.

    roi is (x_px, y_px, width_px, height_px) in raw coordinates, default
    full frame.  The roi is first cropped to a multiple of bin_factor (the
    crop is recorded in metadata under "recon") and each virtual pixel is
    the arithmetic mean of its block, per frame and per plane, in float64.

    Raises:
        EmptyRoi: roi lies outside the frame or crops to nothing.
    """
    if bin_factor < 1:
        raise ConfigInvalid("recon.bin_factor: must be >= 1")
    if roi is None:
        roi = (0, 0, stack.width, stack.height)
    x0, y0, w, h = (int(v) for v in roi)
    if x0 < 0 or y0 < 0 or w < 1 or h < 1 \
            or x0 + w > stack.width or y0 + h > stack.height:
        raise EmptyRoi(f"roi {roi} does not fit a {stack.width}x"
                       f"{stack.height} frame")
    wv, hv = w // bin_factor, h // bin_factor
    if wv < 1 or hv < 1:
        raise EmptyRoi(f"roi {roi} crops to nothing at bin {bin_factor}")
    wc, hc = wv * bin_factor, hv * bin_factor

    def binned(planes: np.ndarray) -> np.ndarray:
        crop = planes[:, y0:y0 + hc, x0:x0 + wc].astype(np.float64)
        return crop.reshape(stack.n_frames, hv, bin_factor,
                            wv, bin_factor).mean(axis=(2, 4))

    metadata = dict(stack.metadata)
    metadata["recon"] = dict(metadata.get("recon", {}))
    metadata["recon"].update({
        "bin_factor": bin_factor,
        "roi_x_px": x0, "roi_y_px": y0,
        "roi_width_px": w, "roi_height_px": h,
        "cropped_width_px": wc, "cropped_height_px": hc,
    })
    return FrameStack(width=wv, height=hv,
                      i_planes=binned(stack.i_planes),
                      q_planes=binned(stack.q_planes),
                      timestamps_ms=stack.timestamps_ms.copy(),
                      metadata=metadata)


def virtual_coords_um(metadata: dict) -> tuple:
    """Virtual-pixel center coordinates implied by a binned stack's metadata."""
    slab = metadata["scene"]["slab"]
    rec = metadata["recon"]
    pitch = slab["pixel_pitch_um"]
    b = rec["bin_factor"]
    wv = rec["cropped_width_px"] // b
    hv = rec["cropped_height_px"] // b
    x = (rec["roi_x_px"] + np.arange(wv) * b + b / 2.0
         - slab["width_px"] / 2.0) * pitch
    y = (rec["roi_y_px"] + np.arange(hv) * b + b / 2.0
         - slab["height_px"] / 2.0) * pitch
    return x, y


def fit_spectrum_grid(stack: FrameStack, sweep_mhz=None, shape: str = "peak",
                      fm_depth_mhz: float = 4.0, threads: int = 1) -> np.ndarray:
    """Fit every virtual pixel's spectrum; returns an (H, W) grid of FitResult.

    Pixels whose fit degenerates or fails to converge get a non-converged
    placeholder result rather than raising; the threshold mask deals with
    them.  Work splits by row across threads with disjoint writes, so the
    grid is identical for any thread count.
    """
    if sweep_mhz is None:
        sweep_mhz = stack.metadata["protocol"]["sweep_mhz"]
    nu = np.asarray(sweep_mhz, dtype=float)
    if nu.size != stack.n_frames:
        raise ConfigInvalid(f"sweep has {nu.size} points but stack has "
                            f"{stack.n_frames} frames")
    grid = np.empty((stack.height, stack.width), dtype=object)
    failed = FitResult(center_mhz=float("nan"), sigma_mhz=float("nan"),
                       amplitude=float("nan"), baseline=float("nan"),
                       center_stderr_mhz=float("inf"), converged=False,
                       residual_rms=float("nan"))
    signal = stack.i_planes.astype(np.float64)

    def fit_row(r: int) -> None:
        for c in range(stack.width):
            try:
                grid[r, c] = fit_gaussian(nu, signal[:, r, c], shape,
                                          fm_depth_mhz)
            except Exception:
                grid[r, c] = failed

    if threads <= 1:
        for r in range(stack.height):
            fit_row(r)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fit_row, range(stack.height)))
    return grid


def threshold_mask(fit_grid: np.ndarray, snr_min: float = 3.0,
                   stderr_max_mhz: float = 2.0) -> np.ndarray:
    """Valid-pixel mask: converged, feature SNR >= snr_min, stderr bounded.

    SNR is |amplitude| over the fit residual rms; a zero-residual fit
    counts as infinite SNR.
    """
    h, w = fit_grid.shape
    valid = np.zeros((h, w), dtype=bool)
    for r in range(h):
        for c in range(w):
            f = fit_grid[r, c]
            if not f.converged:
                continue
            snr = np.inf if f.residual_rms == 0 \
                else abs(f.amplitude) / f.residual_rms
            if snr < snr_min or f.center_stderr_mhz > stderr_max_mhz:
                continue
            valid[r, c] = True
    return valid


def map_from_fits(fit_grid: np.ndarray, spin: SpinSystem, nu1_ref_mhz: float,
                  valid: np.ndarray, x_um: np.ndarray, y_um: np.ndarray,
                  bin_factor: int) -> FieldMap:
    """Convert fitted line centers to sensed field offsets on valid pixels."""
    h, w = fit_grid.shape
    values = np.full((h, w), np.nan)
    for r in range(h):
        for c in range(w):
            if valid[r, c]:
                values[r, c] = frequency_to_sensed_field(
                    spin, fit_grid[r, c].center_mhz, nu1_ref_mhz)
    return FieldMap(values=values, valid=valid.copy(),
                    clipped=np.zeros((h, w), dtype=bool),
                    bin_factor=bin_factor, x_um=np.asarray(x_um, dtype=float),
                    y_um=np.asarray(y_um, dtype=float))


def profile_across_wire(fmap: FieldMap) -> tuple:
    """Column-wise mean over valid, unclipped pixels; empty columns drop.

    Clamped inversions carry no field information, so clipped pixels are
    excluded from the means.  Returns (x_um, field_ut) 1-D arrays,
    ascending in x.
    """
    use = fmap.valid & ~fmap.clipped
    counts = use.sum(axis=0)
    keep = counts > 0
    sums = np.where(use, np.nan_to_num(fmap.values), 0.0).sum(axis=0)
    return fmap.x_um[keep], sums[keep] / counts[keep]


def _profile_model_jac(params, x_um, thickness_um):
    """Depth-averaged wire-field model and its Jacobian in (d, i, x0)."""
    d, i_a, x0 = params
    xp = x_um - x0
    h_nodes = 0.5 * thickness_um * (_QUAD_NODES + 1.0)
    f = np.zeros_like(xp)
    df_dd = np.zeros_like(xp)
    df_dxp = np.zeros_like(xp)
    for h, w in zip(h_nodes, _QUAD_WEIGHTS):
        a = d + h
        den = a * a + xp * xp
        f += w * xp / den
        df_dd += w * (-2.0 * a * xp) / (den * den)
        df_dxp += w * (a * a - xp * xp) / (den * den)
    k = FIELD_COEFF_UT_UM_PER_A * 0.5
    model = k * i_a * f
    jac = np.empty((x_um.size, 3))
    jac[:, 0] = k * i_a * df_dd
    jac[:, 1] = k * f
    jac[:, 2] = -k * i_a * df_dxp
    return model, jac


def fit_wire_profile(x_um, field_ut, thickness_um: float) -> WireFit:
    """Least-squares (d, i, x0) against the depth-averaged field model.

    Initial guesses come from the profile itself: x0 from the zero crossing
    nearest the peak pair, d from the peak offset via x*^2 = d(d + T), and
    the current from the amplitude at the peak.

    Raises:
        SignAmbiguity: the profile never changes sign, so the current's
            sign (and the zero crossing) is undetermined.
        NoConvergence: optimizer cap reached.
    """
    x = np.asarray(x_um, dtype=float)
    y = np.asarray(field_ut, dtype=float)
    if x.size < 10:
        raise ConfigInvalid(f"profile needs >= 10 points, got {x.size}")
    if thickness_um <= 0:
        raise ConfigInvalid("slab.thickness_um: must be > 0")
    sign_change = np.flatnonzero(y[:-1] * y[1:] < 0)
    if sign_change.size == 0:
        raise SignAmbiguity("profile has no sign change across the wire")
    # crossing roots, keep the one nearest the midpoint of the extreme pair
    peak_mid = 0.5 * (x[int(np.argmax(y))] + x[int(np.argmin(y))])
    roots = []
    for i in sign_change:
        roots.append(x[i] - y[i] * (x[i + 1] - x[i]) / (y[i + 1] - y[i]))
    x0_init = float(roots[int(np.argmin(np.abs(np.asarray(roots) - peak_mid)))])

    x_star = abs(x[int(np.argmax(np.abs(y)))] - x0_init)
    x_star = max(x_star, x[1] - x[0])
    t = thickness_um
    d_init = 0.5 * (-t + np.sqrt(t * t + 4.0 * x_star * x_star))
    d_init = max(d_init, 1.0)
    model1, _ = _profile_model_jac((d_init, 1.0, x0_init), x, t)
    peak_idx = int(np.argmax(np.abs(model1)))
    i_init = y[peak_idx] / model1[peak_idx] if model1[peak_idx] != 0 else 1.0

    def residual_jac(p):
        model, jac = _profile_model_jac(p, x, t)
        return model - y, jac

    def accept(p):
        return p[0] > 0 and np.isfinite(p).all()

    p, cov, ssr, _ = levenberg_marquardt(
        residual_jac, np.array([d_init, i_init, x0_init]), accept=accept)
    d_err = float(np.sqrt(cov[0, 0])) if cov is not None else float("inf")
    i_err = float(np.sqrt(cov[1, 1])) if cov is not None else float("inf")
    return WireFit(d_hat_um=float(p[0]), i_hat_a=float(p[1]),
                   x0_um=float(p[2]), d_stderr_um=d_err, i_stderr_a=i_err,
                   residual_rms_ut=float(np.sqrt(ssr / x.size)))


def reconstruct_timeseries(stack: FrameStack, curve: CalibrationCurve,
                           mode: str = "clamp") -> tuple:
    """Invert every pixel of every frame through the calibration curve.

    Returns (fields_ut, clipped) with shape (n_frames, height, width).
    The stack must have been synthesized with the same protocol the curve
    was built for.

    Raises:
        ProtocolMismatch: stack and curve protocols differ.
    """
    kind = stack.metadata.get("protocol", {}).get("kind")
    if kind != curve.protocol:
        raise ProtocolMismatch(
            f"stack protocol '{kind}' vs calibration '{curve.protocol}'")
    signal = stack.i_planes.astype(np.float64)
    fields, clipped = invert_calibration(curve, signal, mode=mode)
    return fields, clipped


def infer_pulse_current(measured_ut, reference_ut, i_ref_a: float,
                        valid=None, clipped=None) -> float:
    """Scale a measured field pattern against a known-current reference.

    Both inputs are field arrays on the same grid (a profile or a map);
    linearity in current makes the best scale a one-parameter least squares,
    s = sum(m*r)/sum(r*r), and the inferred current is s * i_ref in mA.
    Invalid or clipped samples are excluded.

    Raises:
        NoReference: no usable reference samples (missing, all excluded,
            or identically zero).
    """
    if reference_ut is None or i_ref_a == 0:
        raise NoReference("need a reference pattern at a known nonzero current")
    m = np.asarray(measured_ut, dtype=float).ravel()
    r = np.asarray(reference_ut, dtype=float).ravel()
    if m.shape != r.shape:
        raise ConfigInvalid("measured and reference grids differ in size")
    keep = np.isfinite(m) & np.isfinite(r)
    if valid is not None:
        keep &= np.asarray(valid, dtype=bool).ravel()
    if clipped is not None:
        keep &= ~np.asarray(clipped, dtype=bool).ravel()
    denom = float(r[keep] @ r[keep])
    if not keep.any() or denom == 0.0:
        raise NoReference("reference pattern carries no usable signal")
    scale = float(m[keep] @ r[keep]) / denom
    return scale * i_ref_a * 1000.0


def sensitivity_report(noise_floor_ut: float, integration_ms: float,
                       n_sequences: int) -> float:
    """Per-virtual-pixel sensitivity in uT/sqrt(Hz).

    noise_floor is the per-frame field noise after all averaging; the
    bandwidth normalization multiplies by the square root of the total
    integration time n_sequences * integration_ms (in seconds).
    """
    if noise_floor_ut <= 0 or integration_ms <= 0 or n_sequences < 1:
        raise ConfigInvalid("sensitivity inputs must be positive")
    return noise_floor_ut * np.sqrt(n_sequences * integration_ms / 1000.0)

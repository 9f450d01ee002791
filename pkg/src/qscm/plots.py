"""Figure rendering for maps, profiles, traces, calibrations, and spectra.

Everything renders through the Agg backend straight to files; no display
is required.  These are conveniences for the CLI report path and never
feed back into reconstruction.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .recon import FieldMap
from .spin import CalibrationCurve


def render_map(path: str, fmap: FieldMap, title: str = "sensed field") -> None:
    """Field map with excluded pixels grayed out, symmetric color scale."""
    fig, ax = plt.subplots(figsize=(6.0, 5.0))
    data = np.ma.masked_where(~fmap.valid, fmap.values)
    vmax = float(np.nanmax(np.abs(fmap.values))) if fmap.valid.any() else 1.0
    vmax = vmax if vmax > 0 else 1.0
    extent = (fmap.x_um[0], fmap.x_um[-1], fmap.y_um[-1], fmap.y_um[0])
    cmap = plt.get_cmap("RdBu_r").copy()
    cmap.set_bad("0.6")
    im = ax.imshow(data, cmap=cmap, vmin=-vmax, vmax=vmax, extent=extent,
                   aspect="equal", interpolation="nearest")
    fig.colorbar(im, ax=ax, label="B_sens (uT)")
    ax.set_xlabel("x (um)")
    ax.set_ylabel("y (um)")
    ax.set_title(title)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_profile(path: str, x_um, field_ut, model=None,
                   title: str = "field profile across the wire") -> None:
    """Measured profile dots, optional fitted model line."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(x_um, field_ut, "o", ms=3, label="profile")
    if model is not None:
        ax.plot(model[0], model[1], "-", label="fit")
        ax.legend()
    ax.axhline(0.0, color="0.7", lw=0.8)
    ax.set_xlabel("x (um)")
    ax.set_ylabel("B_sens (uT)")
    ax.set_title(title)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_traces(path: str, t_ms, traces: dict,
                  title: str = "reconstructed field traces") -> None:
    """One line per labeled trace versus acquisition time."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, values in traces.items():
        ax.plot(t_ms, values, "-o", ms=3, label=label)
    ax.set_xlabel("t (ms)")
    ax.set_ylabel("B_sens (uT)")
    ax.set_title(title)
    if traces:
        ax.legend()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_calibration(path: str, curve: CalibrationCurve,
                       title: str = "calibration curve") -> None:
    """Signal versus field with the monotone sensing window shaded."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(curve.samples_b_ut, curve.samples_signal, "-", lw=1.2)
    ax.axvspan(curve.sensing_lo_ut, curve.sensing_hi_ut, color="tab:orange",
               alpha=0.25,
               label=f"sensing range [{curve.sensing_lo_ut:.1f}, "
                     f"{curve.sensing_hi_ut:.1f}] uT")
    ax.axhline(0.0, color="0.7", lw=0.8)
    ax.set_xlabel("field offset (uT)")
    ax.set_ylabel("lock-in signal")
    ax.set_title(f"{title} ({curve.protocol})")
    ax.legend()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_spectrum(path: str, freqs_mhz, signal, fit_curve=None,
                    title: str = "per-pixel spectrum") -> None:
    """Spectrum dots with an optional fitted model overlay."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(freqs_mhz, signal, "o", ms=3, label="data")
    if fit_curve is not None:
        ax.plot(fit_curve[0], fit_curve[1], "-", label="fit")
        ax.legend()
    ax.set_xlabel("drive frequency (MHz)")
    ax.set_ylabel("lock-in signal")
    ax.set_title(title)
    fig.savefig(path, dpi=120)
    plt.close(fig)

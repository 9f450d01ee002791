"""Magnetostatics of the wire-under-sensor scene.

A straight wire of effective radius d runs along y underneath the sensor
slab.  The sensed quantity is the projection of the wire's field onto the
bias axis, which at lateral offset x' and depth h below the top surface is

    B_sens(x', h) = (mu0 / 2 pi) * i * x' / ((d + h)^2 + x'^2)

odd in x' and zero directly beneath the wire.  The camera integrates
photoluminescence over the full slab thickness, so the per-pixel field is
the depth average of that expression over h in [0, T].

Lengths are in um, currents in A at this layer (waveform amplitudes are
configured in mA), output fields in uT.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ConfigInvalid, DegenerateGeometry

# (mu0 / 2 pi) * 1 A, expressed as uT * um: 2e-7 T*m = 2e5 uT*um.
FIELD_COEFF_UT_UM_PER_A = 2.0e5

_QUAD_NODES, _QUAD_WEIGHTS = leggauss(64)


@dataclass(frozen=True)
class WireGeometry:
    """Wire placement in the sample frame.

    radius_d_um is the effective distance from the wire center to the slab's
    bottom surface; any extra air gap goes in standoff_um and the two are
    summed wherever the geometry enters the field expression.
    """

    radius_d_um: float
    x0_um: float = 0.0
    standoff_um: float = 0.0
    axis: str = "along_y"

    def __post_init__(self) -> None:
        if self.radius_d_um <= 0:
            raise ConfigInvalid("wire.radius_d_um: must be > 0")
        if self.standoff_um < 0:
            raise ConfigInvalid("wire.standoff_um: must be >= 0")
        if self.axis != "along_y":
            raise ConfigInvalid(f"wire.axis: unsupported axis '{self.axis}'")

    @property
    def depth_um(self) -> float:
        return self.radius_d_um + self.standoff_um


@dataclass(frozen=True)
class SensorSlab:
    """Sensor dimensions and the camera raster projected onto it."""

    thickness_um: float = 300.0
    pixel_pitch_um: float = 3.0
    width_px: int = 512
    height_px: int = 542

    def __post_init__(self) -> None:
        if self.thickness_um <= 0:
            raise ConfigInvalid("slab.thickness_um: must be > 0")
        if self.pixel_pitch_um <= 0:
            raise ConfigInvalid("slab.pixel_pitch_um: must be > 0")
        if self.width_px < 1 or self.height_px < 1:
            raise ConfigInvalid("slab.width_px/height_px: must be >= 1")

    def x_coords_um(self, width_px: int | None = None) -> np.ndarray:
        """Pixel-center x positions; column j sits at (j + 0.5 - W/2)*pitch."""
        w = self.width_px if width_px is None else width_px
        return (np.arange(w) + 0.5 - w / 2.0) * self.pixel_pitch_um

    def y_coords_um(self, height_px: int | None = None) -> np.ndarray:
        h = self.height_px if height_px is None else height_px
        return (np.arange(h) + 0.5 - h / 2.0) * self.pixel_pitch_um


@dataclass(frozen=True)
class CurrentWaveform:
    """Wire current versus time; dc or a single rectangular pulse."""

    kind: str = "dc"
    amplitude_ma: float = 0.0
    t_start_ms: float = 0.0
    duration_ms: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("dc", "pulse"):
            raise ConfigInvalid(f"current.kind: unknown kind '{self.kind}'")
        if self.kind == "pulse" and self.duration_ms <= 0:
            raise ConfigInvalid("current.duration_ms: must be > 0 for pulse")

    def current_at(self, t_ms) -> np.ndarray:
        """Current in A at acquisition time t_ms; pulse window is half-open."""
        amp_a = self.amplitude_ma / 1000.0
        if self.kind == "dc":
            return np.full_like(np.asarray(t_ms, dtype=float), amp_a)
        t = np.asarray(t_ms, dtype=float)
        inside = (t >= self.t_start_ms) & (t < self.t_start_ms + self.duration_ms)
        return np.where(inside, amp_a, 0.0)


@dataclass(frozen=True)
class Scene:
    """Everything geometric and electrical about one experiment."""

    geom: WireGeometry
    slab: SensorSlab
    bias_mt: float
    waveform: CurrentWaveform

    def __post_init__(self) -> None:
        if self.bias_mt <= 0:
            raise ConfigInvalid("scene.bias_mt: must be > 0")


def wire_field_magnitude(i_a: float, r_m: float) -> float:
    """Field magnitude in T at distance r_m (meters) from the wire axis."""
    if r_m <= 0:
        raise DegenerateGeometry(f"distance to wire must be > 0, got {r_m} m")
    return 2.0e-7 * abs(i_a) / r_m


def sensing_field_at(x_um, h_um, geom: WireGeometry, i_a: float):
    """Projected field in uT at lateral position x_um and depth h_um.

    Positive current (flow along +y) gives a positive sensed field at
    x > x0.  h_um is measured down from the slab's top surface and must be
    >= 0; the wire sits depth_um below the bottom surface.
    """
    xp = np.asarray(x_um, dtype=float) - geom.x0_um
    a = geom.depth_um + np.asarray(h_um, dtype=float)
    out = FIELD_COEFF_UT_UM_PER_A * i_a * xp / (a * a + xp * xp)
    if np.ndim(x_um) == 0 and np.ndim(h_um) == 0:
        return float(out)
    return out


def depth_averaged_field(x_um, geom: WireGeometry, slab: SensorSlab,
                         i_a: float):
    """Sensed field averaged over the slab depth, (1/T) * integral over h.

    Fixed 64-node Gauss-Legendre quadrature on [0, T]; the integrand is a
    smooth rational function of h, so this is accurate far beyond the 1e-9
    relative target.  x = x0 returns exactly 0 (odd integrand).  Accepts a
    scalar or an array of positions.
    """
    xp = np.asarray(x_um, dtype=float) - geom.x0_um
    t = slab.thickness_um
    h_nodes = 0.5 * t * (_QUAD_NODES + 1.0)
    # Accumulate node by node so scalar and array inputs share the exact
    # floating-point evaluation order (rasterize must match scalar calls).
    acc = np.zeros_like(xp)
    for h, w in zip(h_nodes, _QUAD_WEIGHTS):
        a = geom.depth_um + h
        acc = acc + w * (xp / (a * a + xp * xp))
    out = FIELD_COEFF_UT_UM_PER_A * i_a * 0.5 * acc
    out = np.where(xp == 0.0, 0.0, out)
    if np.ndim(x_um) == 0:
        return float(out)
    return out


def rasterize_field(geom: WireGeometry, slab: SensorSlab,
                    i_a: float) -> np.ndarray:
    """Depth-averaged field at every raw pixel center, shape (height, width).

    The wire runs along y, so the map is one row repeated; values are
    bitwise identical to per-pixel scalar calls because the quadrature
    accumulates in the same order either way.
    """
    row = depth_averaged_field(slab.x_coords_um(), geom, slab, i_a)
    return np.broadcast_to(row, (slab.height_px, slab.width_px)).copy()

"""Spin-3/2 resonance physics and sensing-protocol response models.

The sensor species is an ensemble of spin-3/2 defect centers whose two
allowed microwave transitions sit at

    nu1 = |gamma * B - 2D|        nu2 = gamma * B + 2D

for a bias field B along the symmetry axis, with gyromagnetic ratio gamma
(28 MHz/mT) and zero-field splitting 2D (70 MHz).  Everything in this module
is a pure function of its arguments: resonance arithmetic, Gaussian ODMR
lineshapes, the demodulated response of the three sensing protocols
(single-frequency FM, dual-frequency FM, microwave-free level-anticrossing),
and calibration-curve construction/inversion.

Unit conventions: frequencies in MHz, absolute fields in mT, field offsets
(the quantity being sensed) in uT.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigInvalid, NoMonotoneInterval, OutOfRange, RegimeViolation

DEFAULT_FM_DEPTH_MHZ = 4.0


@dataclass(frozen=True)
class SpinSystem:
    """Static parameters of the defect ensemble.

    Attributes:
        gamma_mhz_per_mt: Zeeman shift per unit field.
        two_d_mhz: zero-field splitting 2D between the |ms|=1/2 and
            |ms|=3/2 sublevel pairs.
        contrast: peak ODMR amplitude relative to the photoluminescence
            baseline, dimensionless.
        linewidth_sigma_mhz: Gaussian standard deviation of one ODMR line.
    """

    gamma_mhz_per_mt: float = 28.0
    two_d_mhz: float = 70.0
    contrast: float = 0.003
    linewidth_sigma_mhz: float = 8.0

    def __post_init__(self) -> None:
        if self.gamma_mhz_per_mt <= 0:
            raise ConfigInvalid("spin.gamma_mhz_per_mt: must be > 0")
        if self.two_d_mhz <= 0:
            raise ConfigInvalid("spin.two_d_mhz: must be > 0")
        if not 0.0 < self.contrast < 1.0:
            raise ConfigInvalid("spin.contrast: must be in (0, 1)")
        if self.linewidth_sigma_mhz <= 0:
            raise ConfigInvalid("spin.linewidth_sigma_mhz: must be > 0")

    @property
    def gslac1_mt(self) -> float:
        """Field where nu1 crosses zero (level crossing of the +-1 branch)."""
        return self.two_d_mhz / self.gamma_mhz_per_mt

    @property
    def gslac2_mt(self) -> float:
        """Field of the second ground-state level anticrossing, 2D/(2*gamma)."""
        return self.two_d_mhz / (2.0 * self.gamma_mhz_per_mt)


def odmr_frequencies(spin: SpinSystem, b_mt):
    """Transition frequencies (nu1, nu2) in MHz at bias field b_mt (mT).

    nu1 folds at the gamma*B = 2D crossing, nu2 is linear.  Accepts scalars
    or arrays.
    """
    b = np.asarray(b_mt, dtype=float)
    zee = spin.gamma_mhz_per_mt * b
    nu1 = np.abs(zee - spin.two_d_mhz)
    nu2 = zee + spin.two_d_mhz
    if np.ndim(b_mt) == 0:
        return float(nu1), float(nu2)
    return nu1, nu2


def bias_from_frequencies(spin: SpinSystem, nu1_mhz: float, nu2_mhz: float,
                          tolerance_mhz: float = 10.0) -> float:
    """Invert the resonance pair to the bias field, B = (nu1 + nu2)/(2*gamma).

    Valid on the upper branch (gamma*B >= 2D), where nu2 - nu1 equals
    2*two_d exactly.  A deviation beyond tolerance_mhz means the branch
    assumption does not hold for the given pair.

    Raises:
        RegimeViolation: ordering is wrong or the splitting deviates from
            2*two_d by more than the tolerance.
    """
    if not (nu2_mhz >= nu1_mhz >= 0.0):
        raise RegimeViolation(
            f"need nu2 >= nu1 >= 0, got ({nu1_mhz}, {nu2_mhz}) MHz")
    deviation = abs((nu2_mhz - nu1_mhz) - 2.0 * spin.two_d_mhz)
    if deviation > tolerance_mhz:
        raise RegimeViolation(
            f"nu2 - nu1 = {nu2_mhz - nu1_mhz:g} MHz deviates from "
            f"2*two_d = {2.0 * spin.two_d_mhz:g} MHz by {deviation:g} MHz "
            f"(tolerance {tolerance_mhz:g})")
    return (nu1_mhz + nu2_mhz) / (2.0 * spin.gamma_mhz_per_mt)


def frequency_to_sensed_field(spin: SpinSystem, nu_pixel_mhz, nu_ref_mhz):
    """Convert a resonance shift to a sensed field offset in uT.

    Both frequencies must lie on the same branch; the result is
    (nu_pixel - nu_ref)/gamma expressed in uT.
    """
    shift = np.asarray(nu_pixel_mhz, dtype=float) - nu_ref_mhz
    out = shift / spin.gamma_mhz_per_mt * 1000.0
    if np.ndim(nu_pixel_mhz) == 0:
        return float(out)
    return out


# --------------------------------------------------------------------------
# Lineshapes
# --------------------------------------------------------------------------

def gaussian_peak(nu_mhz, center_mhz, sigma_mhz, amplitude):
    """Gaussian ODMR feature, amplitude * exp(-(nu-c)^2 / (2 sigma^2))."""
    u = (np.asarray(nu_mhz, dtype=float) - center_mhz) / sigma_mhz
    return amplitude * np.exp(-0.5 * u * u)


def fm_difference(nu_mhz, center_mhz, sigma_mhz, amplitude,
                  fm_depth_mhz: float = DEFAULT_FM_DEPTH_MHZ):
    """Demodulated square-wave FM response of one Gaussian line.

    Exactly the two-point difference peak(nu + depth) - peak(nu - depth);
    the drive toggles between nu +- depth, and the lock-in difference of the
    two half cycles is this expression, not an analytic derivative.
    """
    return (gaussian_peak(np.asarray(nu_mhz, dtype=float) + fm_depth_mhz,
                          center_mhz, sigma_mhz, amplitude)
            - gaussian_peak(np.asarray(nu_mhz, dtype=float) - fm_depth_mhz,
                            center_mhz, sigma_mhz, amplitude))


@dataclass(frozen=True)
class Lineshape:
    """A single evaluable ODMR feature.

    kind is "gaussian_peak" or "fm_difference"; fm_depth_mhz only matters
    for the latter.
    """

    kind: str
    center_mhz: float
    sigma_mhz: float
    amplitude: float
    fm_depth_mhz: float = DEFAULT_FM_DEPTH_MHZ

    def __post_init__(self) -> None:
        if self.kind not in ("gaussian_peak", "fm_difference"):
            raise ConfigInvalid(f"lineshape.kind: unknown kind '{self.kind}'")
        if self.sigma_mhz <= 0:
            raise ConfigInvalid("lineshape.sigma_mhz: must be > 0")
        if self.kind == "fm_difference" and self.fm_depth_mhz <= 0:
            raise ConfigInvalid("lineshape.fm_depth_mhz: must be > 0")

    def evaluate(self, nu_mhz):
        if self.kind == "gaussian_peak":
            return gaussian_peak(nu_mhz, self.center_mhz, self.sigma_mhz,
                                 self.amplitude)
        return fm_difference(nu_mhz, self.center_mhz, self.sigma_mhz,
                             self.amplitude, self.fm_depth_mhz)


# --------------------------------------------------------------------------
# Protocol responses
# --------------------------------------------------------------------------

def single_am_response(spin: SpinSystem, drive_mhz, b_mt):
    """On/off amplitude-modulated response: sum of both Gaussian lines.

    The lock-in difference of microwave-on and microwave-off half cycles,
    with the resonant photoluminescence change mapped to a positive signal.
    Peak-shaped versus drive frequency.
    """
    nu1, nu2 = odmr_frequencies(spin, b_mt)
    s = spin.linewidth_sigma_mhz
    return (gaussian_peak(drive_mhz, nu1, s, spin.contrast)
            + gaussian_peak(drive_mhz, nu2, s, spin.contrast))


def single_fm_response(spin: SpinSystem, drive_mhz, b_mt,
                       fm_depth_mhz: float = DEFAULT_FM_DEPTH_MHZ):
    """Square-wave FM response at one drive frequency; both lines included.

    Derivative-shaped versus drive, crossing zero exactly on resonance.  The
    far line only contributes its Gaussian tail, negligible at typical
    working points where the lines are many linewidths apart.
    """
    nu1, nu2 = odmr_frequencies(spin, b_mt)
    s = spin.linewidth_sigma_mhz
    return (fm_difference(drive_mhz, nu1, s, spin.contrast, fm_depth_mhz)
            + fm_difference(drive_mhz, nu2, s, spin.contrast, fm_depth_mhz))


def dual_fm_response(spin: SpinSystem, drive1_mhz: float, drive2_mhz: float,
                     b_mt, d_shift_mhz=0.0,
                     fm_depth_mhz: float = DEFAULT_FM_DEPTH_MHZ):
    """Simultaneous FM drive of both transitions, one drive per line.

    With a common zero-field-splitting fluctuation d_shift the resonances sit
    at nu1 = |gamma b - (two_d + 2 d_shift)| and nu2 = gamma b + two_d +
    2 d_shift.  Drive 1 reads line 1 and drive 2 reads line 2; the two
    demodulated contributions add.  Because both lines move the same way
    with b but opposite ways with d_shift, the sum doubles the field slope
    while a symmetric drive placement cancels d_shift to all orders.
    """
    if not drive1_mhz < drive2_mhz:
        raise ConfigInvalid("dual-fm drives must satisfy drive1 < drive2")
    b = np.asarray(b_mt, dtype=float)
    zee = spin.gamma_mhz_per_mt * b
    split = spin.two_d_mhz + 2.0 * np.asarray(d_shift_mhz, dtype=float)
    nu1 = np.abs(zee - split)
    nu2 = zee + split
    s = spin.linewidth_sigma_mhz
    return (fm_difference(drive1_mhz, nu1, s, spin.contrast, fm_depth_mhz)
            + fm_difference(drive2_mhz, nu2, s, spin.contrast, fm_depth_mhz))


@dataclass(frozen=True)
class GslacModel:
    """Photoluminescence feature at a ground-state level anticrossing.

    PL versus field is a Gaussian feature of width sigma_b_ut centered at
    b_anticross_mt, optionally flanked by satellite features (offset in uT,
    relative amplitude).  Sensing applies square-wave field modulation of
    half-swing mod_depth_ut and reads the half-cycle difference, so no
    microwave drive is involved.
    """

    b_anticross_mt: float = 1.25
    sigma_b_ut: float = 36.14
    contrast: float = 0.003
    mod_depth_ut: float = 25.0
    satellites: tuple = ()

    def __post_init__(self) -> None:
        if self.b_anticross_mt <= 0:
            raise ConfigInvalid("gslac.b_anticross_mt: must be > 0")
        if self.sigma_b_ut <= 0:
            raise ConfigInvalid("gslac.sigma_b_ut: must be > 0")
        if self.mod_depth_ut <= 0:
            raise ConfigInvalid("gslac.mod_depth_ut: must be > 0")
        for pair in self.satellites:
            if len(pair) != 2:
                raise ConfigInvalid(
                    "gslac.satellites: entries must be (offset_ut, rel_amplitude)")

    @classmethod
    def from_spin(cls, spin: SpinSystem, **kwargs) -> "GslacModel":
        """Model centered at the spin system's anticrossing two_d/(2*gamma)."""
        return cls(b_anticross_mt=spin.gslac2_mt, **kwargs)

    def pl(self, b_mt):
        """PL variation versus absolute field, feature plus satellites."""
        off_ut = (np.asarray(b_mt, dtype=float) - self.b_anticross_mt) * 1000.0
        out = self.contrast * np.exp(-0.5 * (off_ut / self.sigma_b_ut) ** 2)
        for sat_off, sat_amp in self.satellites:
            u = (off_ut - sat_off) / self.sigma_b_ut
            out = out + self.contrast * sat_amp * np.exp(-0.5 * u * u)
        return out


def gslac_response(model: GslacModel, b_mt):
    """Lock-in difference under square-wave field modulation.

    PL(b + m) - PL(b - m) with m = mod_depth_ut; zero by symmetry when b
    sits exactly on the (satellite-free) feature center.
    """
    m_mt = model.mod_depth_ut / 1000.0
    b = np.asarray(b_mt, dtype=float)
    return model.pl(b + m_mt) - model.pl(b - m_mt)


# --------------------------------------------------------------------------
# Protocol objects: a uniform signal(b_rel_ut) interface used by the frame
# synthesizer and by calibration.
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SingleFmProtocol:
    """FM drive parked near nu1 of the bias field, plus optional detuning."""

    spin: SpinSystem
    bias_mt: float
    detuning_mhz: float = 0.0
    fm_depth_mhz: float = DEFAULT_FM_DEPTH_MHZ

    name = "single_fm"

    @property
    def drive_mhz(self) -> float:
        nu1, _ = odmr_frequencies(self.spin, self.bias_mt)
        return nu1 + self.detuning_mhz

    def signal(self, b_rel_ut):
        b = self.bias_mt + np.asarray(b_rel_ut, dtype=float) / 1000.0
        return single_fm_response(self.spin, self.drive_mhz, b,
                                  self.fm_depth_mhz)


@dataclass(frozen=True)
class DualFmProtocol:
    """Both transitions driven, both drives offset by the same detuning.

    The common detuning shifts the response zero crossing to +detuning/gamma
    and makes the monotone sensing interval asymmetric about zero field.
    """

    spin: SpinSystem
    bias_mt: float
    detuning_mhz: float = 0.0
    fm_depth_mhz: float = DEFAULT_FM_DEPTH_MHZ

    name = "dual_fm"

    @property
    def drives_mhz(self) -> tuple:
        nu1, nu2 = odmr_frequencies(self.spin, self.bias_mt)
        return nu1 + self.detuning_mhz, nu2 + self.detuning_mhz

    def signal(self, b_rel_ut, d_shift_mhz=0.0):
        d1, d2 = self.drives_mhz
        b = self.bias_mt + np.asarray(b_rel_ut, dtype=float) / 1000.0
        return dual_fm_response(self.spin, d1, d2, b, d_shift_mhz,
                                self.fm_depth_mhz)


@dataclass(frozen=True)
class GslacProtocol:
    """Microwave-free sensing at a level anticrossing."""

    model: GslacModel
    bias_mt: float

    name = "gslac"

    def signal(self, b_rel_ut):
        b = self.bias_mt + np.asarray(b_rel_ut, dtype=float) / 1000.0
        return gslac_response(self.model, b)


# --------------------------------------------------------------------------
# Calibration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationCurve:
    """Sampled signal-versus-field response with its monotone sensing window.

    samples_b_ut/samples_signal hold the full sampled sweep; the interval
    [sensing_lo_ut, sensing_hi_ut] is the largest stretch around the
    operating zero crossing on which the signal is strictly monotone.  The
    window need not straddle zero: a detuned protocol has an asymmetric one.
    """

    samples_b_ut: np.ndarray
    samples_signal: np.ndarray
    sensing_lo_ut: float
    sensing_hi_ut: float
    protocol: str

    def __post_init__(self) -> None:
        if self.samples_b_ut.shape != self.samples_signal.shape:
            raise ConfigInvalid("calibration samples must be parallel arrays")
        if not self.sensing_lo_ut < self.sensing_hi_ut:
            raise ConfigInvalid("calibration sensing interval is empty")

    def _window(self):
        b = self.samples_b_ut
        i0 = int(np.searchsorted(b, self.sensing_lo_ut, side="left"))
        i1 = int(np.searchsorted(b, self.sensing_hi_ut, side="right"))
        return b[i0:i1], self.samples_signal[i0:i1]

    @property
    def signal_bounds(self) -> tuple:
        """(low, high) signal values over the sensing window."""
        _, s = self._window()
        return float(np.min(s)), float(np.max(s))


def build_calibration(protocol, b_lo_ut: float, b_hi_ut: float,
                      n_samples: int = 512) -> CalibrationCurve:
    """Sample a protocol response and locate its monotone sensing window.

    The sweep is n_samples points over [b_lo_ut, b_hi_ut] of field offset.
    The operating zero crossing is the sampled sign change whose
    interpolated root lies nearest zero offset; the window is grown from it
    in both directions while consecutive samples keep strictly the same
    ordering.

    Raises:
        NoMonotoneInterval: the sampled response never changes sign.
    """
    if n_samples < 16:
        raise ConfigInvalid("calibration n_samples: must be >= 16")
    if not b_lo_ut < b_hi_ut:
        raise ConfigInvalid("calibration sweep range is empty")
    b = np.linspace(float(b_lo_ut), float(b_hi_ut), int(n_samples))
    s = np.asarray(protocol.signal(b), dtype=float)

    prod = s[:-1] * s[1:]
    bracket = np.flatnonzero((prod < 0) | (s[:-1] == 0.0))
    if bracket.size == 0:
        raise NoMonotoneInterval(
            f"no zero crossing of the {protocol.name} response in "
            f"[{b_lo_ut:g}, {b_hi_ut:g}] uT")
    roots = []
    for i in bracket:
        if s[i] == 0.0:
            roots.append(b[i])
        else:
            # linear interpolation inside the bracket
            roots.append(b[i] - s[i] * (b[i + 1] - b[i]) / (s[i + 1] - s[i]))
    k = int(bracket[int(np.argmin(np.abs(roots)))])

    d = np.diff(s)
    direction = 1.0 if s[k + 1] > s[k] else -1.0
    lo = k
    while lo > 0 and d[lo - 1] * direction > 0:
        lo -= 1
    hi = k + 1
    while hi < s.size - 1 and d[hi] * direction > 0:
        hi += 1
    return CalibrationCurve(samples_b_ut=b, samples_signal=s,
                            sensing_lo_ut=float(b[lo]),
                            sensing_hi_ut=float(b[hi]),
                            protocol=protocol.name)


def invert_calibration(curve: CalibrationCurve, signal, mode: str = "clamp"):
    """Map lock-in signal back to field offset through the monotone window.

    Piecewise-linear interpolation of the sampled inverse.  Signals outside
    the achievable window range either clamp to the nearest boundary with a
    raised clipped flag (mode "clamp", the default) or raise (mode
    "strict").  Returns (field_ut, clipped) with shapes following the input.

    Raises:
        OutOfRange: strict mode only.
    """
    if mode not in ("clamp", "strict"):
        raise ConfigInvalid(f"invert mode: unknown mode '{mode}'")
    bw, sw = curve._window()
    if sw[0] > sw[-1]:
        # np.interp needs ascending x
        sw = sw[::-1]
        bw = bw[::-1]
    sig = np.asarray(signal, dtype=float)
    clipped = (sig < sw[0]) | (sig > sw[-1])
    if mode == "strict" and np.any(clipped):
        raise OutOfRange("signal outside the calibrated sensing interval")
    fields = np.interp(sig, sw, bw)
    if np.ndim(signal) == 0:
        return float(fields), bool(clipped)
    return fields, clipped

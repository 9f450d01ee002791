"""qscm: forward simulation and reconstruction for widefield lock-in
camera magnetometry with spin-3/2 defect ensembles.

The package splits into resonance physics and protocol responses (spin),
scene magnetostatics (wirefield), frame-stack synthesis (framesim), the
inverse pipeline (recon, fitting), file formats (stackio), configuration
(config), figures (plots), and the command-line front end (cli).
"""
from .errors import (ConfigInvalid, DegenerateGeometry, DegenerateSpectrum,
                     EmptyRoi, FormatError, IoError, NoConvergence,
                     NoMonotoneInterval, NoReference, OutOfRange,
                     ProtocolMismatch, QscmError, RegimeViolation,
                     ShapeMismatch, SignAmbiguity)
from .fitting import FitResult, fit_gaussian, levenberg_marquardt
from .framesim import (DriftArtifact, FrameStack, NoiseModel, TimingConfig,
                       demodulate, synth_spectrum_stack,
                       synth_timeseries_stack)
from .recon import (FieldMap, WireFit, bin_frames, fit_spectrum_grid,
                    fit_wire_profile, infer_pulse_current, map_from_fits,
                    profile_across_wire, reconstruct_timeseries,
                    sensitivity_report, threshold_mask, virtual_coords_um)
from .spin import (CalibrationCurve, DualFmProtocol, GslacModel,
                   GslacProtocol, Lineshape, SingleFmProtocol, SpinSystem,
                   bias_from_frequencies, build_calibration, dual_fm_response,
                   fm_difference, frequency_to_sensed_field, gaussian_peak,
                   gslac_response, invert_calibration, odmr_frequencies,
                   single_am_response, single_fm_response)
from .stackio import (read_calibration, read_map, read_stack,
                      write_calibration, write_map, write_pgm, write_stack)
from .wirefield import (CurrentWaveform, Scene, SensorSlab, WireGeometry,
                        depth_averaged_field, rasterize_field,
                        sensing_field_at, wire_field_magnitude)

__version__ = "0.1.0"

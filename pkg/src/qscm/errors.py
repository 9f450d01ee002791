"""Exception hierarchy shared across the toolkit.

Every error the library raises on purpose derives from QscmError, and the
CLI maps the subclass to a stable process exit code (see ``exit_code``).
"""


class QscmError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigInvalid(QscmError):
    """A run configuration failed schema or value validation."""

    exit_code = 2


class IoError(QscmError):
    """An input or output file could not be accessed."""

    exit_code = 3


class FormatError(QscmError):
    """A file exists but is not a well-formed artifact (magic, CRC, size)."""

    exit_code = 4


class ProtocolMismatch(QscmError):
    """Inputs produced under different sensing protocols were combined."""

    exit_code = 5


class RegimeViolation(QscmError):
    """Measured frequencies are inconsistent with the assumed branch."""


class NoMonotoneInterval(QscmError):
    """A sampled response has no usable zero crossing in the sweep range."""


class OutOfRange(QscmError):
    """A signal falls outside the calibrated sensing interval (strict mode)."""


class DegenerateGeometry(QscmError):
    """A geometric quantity (radius, distance) is non-physical."""


class ShapeMismatch(QscmError):
    """Array arguments do not share the required shape."""


class NoConvergence(QscmError):
    """An iterative fit hit its iteration cap before converging."""


class DegenerateSpectrum(QscmError):
    """A spectrum is too flat or too short to fit."""


class SignAmbiguity(QscmError):
    """A profile lacks the sign change needed to locate the wire."""


class NoReference(QscmError):
    """Current inference was attempted without a reference profile."""


class EmptyRoi(QscmError):
    """A region of interest contains no usable pixels."""

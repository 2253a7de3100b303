"""Exception hierarchy shared by all ftl modules.

Every error raised on purpose by this package derives from FtlError, so
callers (and the CLI exit-code mapping) can distinguish our failures from
genuine bugs.
"""


class FtlError(Exception):
    """Base class for all errors raised by this package."""


class NonSymmetric(FtlError):
    """Matrix handed to the symmetric eigensolver is not symmetric."""


class NonFinite(FtlError):
    """Input contains NaN or Inf entries."""


class DimensionMismatch(FtlError):
    """Operand shapes do not chain."""


class DegenerateSpectrum(FtlError):
    """Eigenvalue mass is zero; no basis can be extracted."""


class ConfigInvalid(FtlError):
    """A configuration object violates its invariants."""


class FormatVersionMismatch(FtlError):
    """File carries an unknown format version tag."""


class CorruptRecord(FtlError):
    """File is truncated or structurally inconsistent."""


class LabelOutOfRange(FtlError):
    """Class label outside [0, n_classes)."""


class EmptyBatch(FtlError):
    """A training step received no samples."""


class EmptyClass(FtlError):
    """A per-class statistic was requested for a class with no samples."""


class InsufficientData(FtlError):
    """Not enough samples to compute the requested statistic."""


class EmptyGallery(FtlError):
    """Nearest-neighbor identification needs at least two gallery classes."""


class Diverged(FtlError):
    """Training loss became NaN or Inf."""

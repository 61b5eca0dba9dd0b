"""Exception hierarchy shared across the package."""


class BiometryError(Exception):
    """Base class for all package errors."""


class DomainError(BiometryError, ValueError):
    """An argument lies outside the domain of an operation."""


class DegenerateOrientationError(BiometryError):
    """Landmarks do not define a usable measurement orientation."""


class ConvergenceError(BiometryError):
    """An iterative fit did not converge.

    The last iterate is kept on ``last`` so callers can inspect it.
    """

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class LandmarkOutOfFrameError(BiometryError):
    """A transformed landmark left the image frame."""


class SkipSample(BiometryError):
    """Every augmentation attempt was rejected; drop the sample this epoch."""


class ScaleRecoveryError(BiometryError):
    """Too few ruler markers were found to recover the pixel spacing."""


class EllipseFitError(BiometryError):
    """Points do not determine an ellipse."""


class SkipRecord(BiometryError):
    """A dataset record cannot be used (e.g. empty annotation mask)."""


class InsufficientDataError(BiometryError, ValueError):
    """Not enough samples for a statistic."""


class DegenerateTestError(BiometryError):
    """A statistical test is undefined for the given samples."""


class TrainingError(BiometryError):
    """Training aborted (non-finite loss, bad dataset)."""

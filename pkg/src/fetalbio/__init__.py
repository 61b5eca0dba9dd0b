"""Landmark-based fetal biometry: orientation-aware keypoint regression."""

from .core import AnnotatedImage, LandmarkPair, MeasurementKind, NormalizedPoint, Point2D
from .dod import OrientationEstimator, OrientationModel, fit_orientation, reassign
from .exceptions import BiometryError
from .measure import compute_measurement, fit_ellipse, recover_scale
from .metrics import agreement_report, paired_t_test

__version__ = "0.1.0"

__all__ = [
    "AnnotatedImage",
    "BiometryError",
    "LandmarkPair",
    "MeasurementKind",
    "NormalizedPoint",
    "OrientationEstimator",
    "OrientationModel",
    "Point2D",
    "agreement_report",
    "compute_measurement",
    "fit_ellipse",
    "fit_orientation",
    "paired_t_test",
    "reassign",
    "recover_scale",
]

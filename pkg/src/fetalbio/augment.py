"""Joint image/landmark geometric augmentation for training.

All warps are about the image centre ``((W - 1) / 2, (H - 1) / 2)``, keep the
original canvas size and fill uncovered pixels with zeros. A positive angle
maps the +x axis onto +y, i.e. clockwise on screen.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from ._validation import check_image
from .core import LandmarkPair, Point2D
from .dod import OrientationModel, reassign
from .exceptions import DomainError, LandmarkOutOfFrameError, SkipSample


@dataclass(frozen=True)
class AugmentConfig:
    rotation_range_deg: tuple = (-180.0, 180.0)
    scale_range_pct: tuple = (-5.0, 5.0)
    max_resample_attempts: int = 10
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.rotation_range_deg
        if not -180 <= lo <= hi <= 180:
            raise DomainError(f"rotation range {self.rotation_range_deg} not within [-180, 180]")
        lo, hi = self.scale_range_pct
        if not -5 <= lo <= hi <= 5:
            raise DomainError(f"scale range {self.scale_range_pct} not within [-5, 5] percent")
        if self.max_resample_attempts < 1:
            raise DomainError("max_resample_attempts must be >= 1")

    @classmethod
    def disabled(cls, seed=0):
        return cls((0.0, 0.0), (0.0, 0.0), 1, seed)


def rotation_matrix(angle_deg) -> np.ndarray:
    """2x2 rotation acting on ``(x, y)``; quarter turns are exact."""
    quarter = angle_deg / 90.0
    if quarter == int(quarter):
        c, s = [(1, 0), (0, 1), (-1, 0), (0, -1)][int(quarter) % 4]
    else:
        t = np.radians(angle_deg)
        c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s], [s, c]], dtype=float)


def image_center(shape) -> np.ndarray:
    h, w = shape
    return np.array([(w - 1) / 2.0, (h - 1) / 2.0])


def transform_points(points, matrix, shape) -> np.ndarray:
    """Apply ``p -> c + matrix @ (p - c)`` to ``(n, 2)`` ``(x, y)`` rows."""
    c = image_center(shape)
    return (np.asarray(points, dtype=float) - c) @ np.asarray(matrix).T + c


def warp_image(image, matrix) -> np.ndarray:
    """Resample ``image`` under the centred affine map, bilinear, zero fill."""
    image = np.asarray(image, dtype=float)
    inv = np.linalg.inv(matrix)
    # scipy works in (row, col) order
    inv_rc = inv[::-1, ::-1]
    c_rc = image_center(image.shape)[::-1]
    offset = c_rc - inv_rc @ c_rc
    return ndimage.affine_transform(image, inv_rc, offset=offset, order=1, mode="constant", cval=0.0)


def _in_frame(points, shape):
    h, w = shape
    p = np.asarray(points)
    return bool(np.all((p[:, 0] >= 0) & (p[:, 0] < w) & (p[:, 1] >= 0) & (p[:, 1] < h)))


def _apply(image, points, matrix):
    image = check_image(image)
    new_points = transform_points(points, matrix, image.shape)
    if not _in_frame(new_points, image.shape):
        raise LandmarkOutOfFrameError("landmark mapped outside the image")
    return warp_image(image, matrix), new_points


def _identity(image, points):
    return np.array(image, dtype=float, copy=True), np.array(points, dtype=float, copy=True)


def rotate(image, points, angle_deg):
    """Rotate image and ``(n, 2)`` landmark array about the image centre.

    Raises
    ------
    LandmarkOutOfFrameError
        If a rotated landmark falls outside the canvas.
    """
    if not -180 <= angle_deg <= 180:
        raise DomainError(f"angle {angle_deg} outside [-180, 180]")
    if angle_deg == 0:
        return _identity(image, points)
    return _apply(image, points, rotation_matrix(angle_deg))


def scale_jitter(image, points, factor):
    """Zoom image and landmarks about the centre by ``factor`` in [0.95, 1.05]."""
    if not 0.95 - 1e-12 <= factor <= 1.05 + 1e-12:
        raise DomainError(f"scale factor {factor} outside [0.95, 1.05]")
    if factor == 1:
        return _identity(image, points)
    return _apply(image, points, factor * np.eye(2))


def sample_parameters(config: AugmentConfig, rng):
    angle = rng.uniform(*config.rotation_range_deg)
    factor = 1.0 + rng.uniform(*config.scale_range_pct) / 100.0
    return float(angle), float(factor)


def augment_sample(
    image,
    pair: LandmarkPair,
    model: Optional[OrientationModel],
    config: AugmentConfig,
    rng,
    ordering: str = "abs",
    origin: str = "corner",
):
    """Rotate, scale, then relabel one training sample.

    The rotation and the scaling are composed and applied in a single
    resampling. Parameters are redrawn up to ``config.max_resample_attempts``
    times while a landmark leaves the frame. With ``model=None`` the labels
    keep their (transformed) annotation order.

    Returns
    -------
    image : ndarray
    pair : LandmarkPair
    params : (angle_deg, scale_factor)

    Raises
    ------
    SkipSample
        When every attempt was rejected.
    """
    image = check_image(image)
    points = pair.as_array()
    for _ in range(config.max_resample_attempts):
        angle, factor = sample_parameters(config, rng)
        matrix = factor * rotation_matrix(angle)
        new_points = transform_points(points, matrix, image.shape)
        if not _in_frame(new_points, image.shape):
            continue
        if angle == 0 and factor == 1:
            out_img, new_points = _identity(image, points)
        else:
            out_img = warp_image(image, matrix)
        out = LandmarkPair(Point2D(*new_points[0]), Point2D(*new_points[1]), pair.measurement)
        if model is not None:
            h, w = image.shape
            out = reassign(out, model, w, h, ordering=ordering, origin=origin)
        return out_img, out, (angle, factor)
    raise SkipSample(f"all {config.max_resample_attempts} augmentation attempts left the frame")

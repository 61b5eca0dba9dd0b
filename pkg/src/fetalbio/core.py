"""Domain types and the image coordinate convention.

Coordinates follow one frame everywhere in the package: ``x`` grows to the
right, ``y`` grows downward, and the origin is the centre of the top-left
pixel. Landmark coordinates are continuous (sub-pixel) values.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import DomainError


class MeasurementKind(str, enum.Enum):
    """Biometric measurement defined by a pair of landmarks."""

    OFD = "OFD"
    BPD = "BPD"
    FL = "FL"

    @classmethod
    def parse(cls, value) -> "MeasurementKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().upper())
        except ValueError:
            raise DomainError(f"unknown measurement kind {value!r}") from None


@dataclass(frozen=True)
class Point2D:
    x: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise DomainError(f"non-finite point ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    @classmethod
    def from_array(cls, a) -> "Point2D":
        return cls(float(a[0]), float(a[1]))


@dataclass(frozen=True)
class NormalizedPoint:
    """A point divided by the image width and height."""

    u: float
    v: float

    def __post_init__(self):
        object.__setattr__(self, "u", float(self.u))
        object.__setattr__(self, "v", float(self.v))
        if not (0.0 <= self.u <= 1.0 and 0.0 <= self.v <= 1.0):
            raise DomainError(f"normalized point ({self.u}, {self.v}) outside [0, 1]^2")

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v], dtype=float)


@dataclass(frozen=True)
class LandmarkPair:
    """Two landmarks defining one measurement, in annotation order."""

    first: Point2D
    second: Point2D
    measurement: MeasurementKind

    def __post_init__(self):
        if self.first == self.second:
            raise DomainError("landmark pair endpoints coincide")
        object.__setattr__(self, "measurement", MeasurementKind.parse(self.measurement))

    @classmethod
    def from_coords(cls, x1, y1, x2, y2, measurement) -> "LandmarkPair":
        return cls(Point2D(float(x1), float(y1)), Point2D(float(x2), float(y2)), measurement)

    def as_array(self) -> np.ndarray:
        """Return the pair as a ``(2, 2)`` array, one row per landmark."""
        return np.array([[self.first.x, self.first.y], [self.second.x, self.second.y]])

    def swapped(self) -> "LandmarkPair":
        return LandmarkPair(self.second, self.first, self.measurement)

    def length(self) -> float:
        return euclidean_distance(self.first, self.second)

    def within(self, width: int, height: int) -> bool:
        return all(0 <= p.x < width and 0 <= p.y < height for p in (self.first, self.second))


@dataclass(frozen=True, eq=False)
class AnnotatedImage:
    pixels: np.ndarray
    landmarks: tuple = ()
    mm_per_pixel: Optional[float] = None
    subject_id: str = ""
    source_id: str = ""
    image_id: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 2:
            raise DomainError(f"expected a 2D grayscale image, got shape {pixels.shape}")
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "landmarks", tuple(self.landmarks))
        if self.mm_per_pixel is not None and not self.mm_per_pixel > 0:
            raise DomainError(f"mm_per_pixel must be positive, got {self.mm_per_pixel}")
        for pair in self.landmarks:
            if not pair.within(self.width, self.height):
                raise DomainError(
                    f"landmark pair {pair} outside the {self.width}x{self.height} image"
                )

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    def pair(self, kind) -> LandmarkPair:
        kind = MeasurementKind.parse(kind)
        for p in self.landmarks:
            if p.measurement is kind:
                return p
        raise KeyError(f"image {self.image_id!r} has no {kind.value} landmarks")

    def has(self, kind) -> bool:
        kind = MeasurementKind.parse(kind)
        return any(p.measurement is kind for p in self.landmarks)


def normalize(p: Point2D, width: int, height: int) -> NormalizedPoint:
    """Map a pixel position to ``(x / width, y / height)``."""
    if not (0 <= p.x < width and 0 <= p.y < height):
        raise DomainError(f"point ({p.x}, {p.y}) outside the {width}x{height} image")
    return NormalizedPoint(p.x / width, p.y / height)


def _snap(x: float) -> float:
    # undo the rounding of x / n * n so integer pixels map back exactly
    r = round(x)
    return float(r) if abs(x - r) <= 4 * math.ulp(max(1.0, abs(x))) else x


def denormalize(q: NormalizedPoint, width: int, height: int) -> Point2D:
    return Point2D(_snap(q.u * width), _snap(q.v * height))


def euclidean_distance(a: Point2D, b: Point2D) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)

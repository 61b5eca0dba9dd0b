"""Pixel to millimetre conversion and ellipse-based landmark derivation."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from skimage.feature import match_template, peak_local_max

from ._validation import check_image, check_points, check_positive
from .core import LandmarkPair, MeasurementKind, Point2D, euclidean_distance
from .exceptions import DomainError, EllipseFitError, ScaleRecoveryError

NCC_THRESHOLD = 0.6
MIN_PEAKS = 3


class ScaleSource(str, enum.Enum):
    METADATA = "metadata"
    RECOVERED = "recovered"


@dataclass(frozen=True, eq=False)
class RulerTemplate:
    """Appearance of one ruler marker and where to look for the ruler.

    ``search_band`` is ``(x0, y0, x1, y1)`` with exclusive upper bounds.
    """

    patch: np.ndarray
    physical_spacing_mm: float
    search_band: tuple
    threshold: float = NCC_THRESHOLD
    nms_radius: int = 0

    def __post_init__(self):
        patch = check_image(self.patch, "patch")
        object.__setattr__(self, "patch", patch)
        check_positive(self.physical_spacing_mm, "physical_spacing_mm")
        x0, y0, x1, y1 = (int(v) for v in self.search_band)
        if not (x1 > x0 >= 0 and y1 > y0 >= 0):
            raise DomainError(f"invalid search band {self.search_band}")
        object.__setattr__(self, "search_band", (x0, y0, x1, y1))
        ph, pw = patch.shape
        if ph > y1 - y0 or pw > x1 - x0:
            raise DomainError("template patch larger than the search band")
        if self.nms_radius <= 0:
            object.__setattr__(self, "nms_radius", max(1, pw // 2))

    def save(self, patch_path) -> Path:
        """Write the patch as an image and its parameters to a JSON sidecar."""
        patch_path = Path(patch_path)
        lo, hi = self.patch.min(), self.patch.max()
        scaled = np.zeros_like(self.patch) if hi == lo else (self.patch - lo) / (hi - lo)
        Image.fromarray(np.round(scaled * 255).astype(np.uint8)).save(patch_path)
        sidecar = patch_path.with_suffix(".json")
        sidecar.write_text(
            json.dumps(
                {
                    "patch": patch_path.name,
                    "physical_spacing_mm": self.physical_spacing_mm,
                    "search_band": list(self.search_band),
                    "threshold": self.threshold,
                    "nms_radius": self.nms_radius,
                },
                indent=2,
            )
        )
        return sidecar

    @classmethod
    def load(cls, sidecar_path) -> "RulerTemplate":
        sidecar_path = Path(sidecar_path)
        meta = json.loads(sidecar_path.read_text())
        patch = np.asarray(Image.open(sidecar_path.parent / meta["patch"]).convert("L"), float)
        return cls(
            patch / 255.0,
            meta["physical_spacing_mm"],
            tuple(meta["search_band"]),
            meta.get("threshold", NCC_THRESHOLD),
            meta.get("nms_radius", 0),
        )


def marker_patch(size=7, marker=3) -> np.ndarray:
    """A bright square marker centred on a dark patch."""
    patch = np.zeros((size, size))
    lo = (size - marker) // 2
    patch[lo : lo + marker, lo : lo + marker] = 1.0
    return patch


def draw_ruler(image, band, spacing_px, marker=3, value=1.0) -> np.ndarray:
    """Draw square markers every ``spacing_px`` along the band's long axis.

    Returns the ``(n, 2)`` marker centres ``(x, y)``.
    """
    x0, y0, x1, y1 = band
    half = marker // 2
    centres = []
    if y1 - y0 >= x1 - x0:
        cx = (x0 + x1 - 1) // 2
        for cy in range(y0 + half + 2, y1 - half - 2, spacing_px):
            centres.append((cx, cy))
    else:
        cy = (y0 + y1 - 1) // 2
        for cx in range(x0 + half + 2, x1 - half - 2, spacing_px):
            centres.append((cx, cy))
    for cx, cy in centres:
        image[cy - half : cy - half + marker, cx - half : cx - half + marker] = value
    return np.array(centres, dtype=float)


def find_markers(image, template: RulerTemplate) -> np.ndarray:
    """Marker centres ``(x, y)`` where the normalized cross-correlation peaks."""
    image = check_image(image)
    x0, y0, x1, y1 = template.search_band
    band = image[y0:y1, x0:x1]
    if band.shape != (y1 - y0, x1 - x0) or band.std() == 0:
        return np.empty((0, 2))
    ncc = match_template(band, template.patch, pad_input=True)
    ncc = np.nan_to_num(ncc, nan=0.0)
    peaks = peak_local_max(
        ncc,
        min_distance=template.nms_radius,
        threshold_abs=template.threshold,
        exclude_border=False,
    )
    return np.column_stack([peaks[:, 1] + x0, peaks[:, 0] + y0]).astype(float)


def recover_scale(image, template: RulerTemplate) -> float:
    """Millimetres per pixel from the spacing of detected ruler markers.

    The markers are ordered along the longer side of the search band and the
    scale is ``physical_spacing_mm / median(gap)``.

    Raises
    ------
    ScaleRecoveryError
        If fewer than three markers are found.
    """
    peaks = find_markers(image, template)
    if len(peaks) < MIN_PEAKS:
        raise ScaleRecoveryError(f"found {len(peaks)} ruler markers, need {MIN_PEAKS}")
    x0, y0, x1, y1 = template.search_band
    axis = 1 if y1 - y0 >= x1 - x0 else 0
    peaks = peaks[np.lexsort((peaks[:, 1 - axis], peaks[:, axis]))]
    gaps = np.hypot(*np.diff(peaks, axis=0).T)
    return template.physical_spacing_mm / float(np.median(gaps))


@dataclass(frozen=True)
class Ellipse:
    center: Point2D
    a: float
    b: float
    theta: float

    def __post_init__(self):
        if not (self.a >= self.b > 0):
            raise DomainError(f"need a >= b > 0, got a={self.a}, b={self.b}")
        if not 0 <= self.theta < np.pi:
            raise DomainError(f"theta {self.theta} outside [0, pi)")

    def sample(self, n=100, start=0.0) -> np.ndarray:
        t = start + np.linspace(0, 2 * np.pi, n, endpoint=False)
        ct, st = np.cos(self.theta), np.sin(self.theta)
        x = self.center.x + self.a * np.cos(t) * ct - self.b * np.sin(t) * st
        y = self.center.y + self.a * np.cos(t) * st + self.b * np.sin(t) * ct
        return np.column_stack([x, y])


def _conic_to_ellipse(A, B, C, D, E, F) -> Ellipse:
    Q = np.array([[A, B / 2], [B / 2, C]])
    try:
        x0, y0 = np.linalg.solve(2 * Q, [-D, -E])
    except np.linalg.LinAlgError:
        raise EllipseFitError("conic has no unique centre") from None
    f0 = F + 0.5 * (D * x0 + E * y0)
    if f0 > 0:
        Q, f0 = -Q, -f0
    lam, vec = np.linalg.eigh(Q)
    if not (lam[0] > 0 and f0 < 0):
        raise EllipseFitError("conic is not a real ellipse")
    a = np.sqrt(-f0 / lam[0])
    b = np.sqrt(-f0 / lam[1])
    if np.isclose(a, b, rtol=1e-12, atol=0):
        theta = 0.0
        b = a = 0.5 * (a + b)
    else:
        theta = float(np.arctan2(vec[1, 0], vec[0, 0]) % np.pi)
        if theta >= np.pi:
            theta = 0.0
    return Ellipse(Point2D(x0, y0), float(a), float(b), theta)


def fit_ellipse(points) -> Ellipse:
    """Direct least-squares ellipse fit with scatter-matrix partitioning.

    Points are centred and scaled before the fit; the conic is then converted
    to centre, semi-axes and major-axis angle.

    Raises
    ------
    EllipseFitError
        For fewer than six points, collinear points, or data whose best conic
        is not an ellipse.
    """
    if len(points) and isinstance(points[0], Point2D):
        points = [p.as_array() for p in points]
    P = check_points(points)
    if len(P) < 6:
        raise EllipseFitError(f"need at least 6 points, got {len(P)}")
    mean = P.mean(axis=0)
    scale = np.sqrt(np.mean(np.sum((P - mean) ** 2, axis=1)))
    if not scale > 0:
        raise EllipseFitError("points coincide")
    x, y = ((P - mean) / scale).T

    D1 = np.column_stack([x * x, x * y, y * y])
    D2 = np.column_stack([x, y, np.ones_like(x)])
    S1, S2, S3 = D1.T @ D1, D1.T @ D2, D2.T @ D2
    if np.linalg.cond(S3) > 1e12:
        raise EllipseFitError("points are collinear")
    T = -np.linalg.solve(S3, S2.T)
    M = S1 + S2 @ T
    M = np.vstack([M[2] / 2, -M[1], M[0] / 2])
    _, vec = np.linalg.eig(M)
    vec = np.real(vec)
    cond = 4 * vec[0] * vec[2] - vec[1] ** 2
    good = np.flatnonzero(cond > 0)
    if len(good) == 0:
        raise EllipseFitError("no elliptical solution")
    a1 = vec[:, good[np.argmax(cond[good])]]
    a2 = T @ a1
    e = _conic_to_ellipse(*a1, *a2)
    return Ellipse(
        Point2D(e.center.x * scale + mean[0], e.center.y * scale + mean[1]),
        e.a * scale,
        e.b * scale,
        e.theta,
    )


def ellipse_axis_landmarks(e: Ellipse) -> dict:
    """Endpoints of the major (OFD) and minor (BPD) axes."""
    c = e.center.as_array()
    major = e.a * np.array([np.cos(e.theta), np.sin(e.theta)])
    minor = e.b * np.array([-np.sin(e.theta), np.cos(e.theta)])
    return {
        MeasurementKind.OFD: LandmarkPair(
            Point2D(*(c - major)), Point2D(*(c + major)), MeasurementKind.OFD
        ),
        MeasurementKind.BPD: LandmarkPair(
            Point2D(*(c - minor)), Point2D(*(c + minor)), MeasurementKind.BPD
        ),
    }


@dataclass(frozen=True)
class BiometricResult:
    kind: MeasurementKind
    length_px: float
    mm_per_pixel: float
    length_mm: float
    landmarks: LandmarkPair
    scale_source: ScaleSource

    def to_dict(self) -> dict:
        p = self.landmarks
        return {
            "kind": self.kind.value,
            "landmarks": [[p.first.x, p.first.y], [p.second.x, p.second.y]],
            "length_px": self.length_px,
            "mm_per_pixel": self.mm_per_pixel,
            "length_mm": self.length_mm,
            "scale_source": self.scale_source.value,
        }


def compute_measurement(pair: LandmarkPair, mm_per_pixel, kind=None, scale_source="metadata"):
    mm_per_pixel = check_positive(mm_per_pixel, "mm_per_pixel")
    kind = pair.measurement if kind is None else MeasurementKind.parse(kind)
    length_px = euclidean_distance(pair.first, pair.second)
    return BiometricResult(
        kind, length_px, mm_per_pixel, length_px * mm_per_pixel, pair, ScaleSource(scale_source)
    )

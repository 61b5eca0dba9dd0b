"""Annotation ingest, dataset splits and the synthetic ultrasound-like generator.

Point annotations live in a flat CSV, one row per landmark pair::

    image,measurement,x1,y1,x2,y2,subject_id,mm_per_pixel

``image`` is relative to the CSV file's directory and ``mm_per_pixel`` may be
empty. Landmark order in the file is the annotation order; orientation
relabelling only ever happens downstream, on the fly.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image
from scipy import ndimage
from skimage import measure as skmeasure

from ._validation import check_random_state
from .core import AnnotatedImage, LandmarkPair, MeasurementKind, Point2D
from .exceptions import BiometryError, DomainError, EllipseFitError, SkipRecord
from .measure import RulerTemplate, draw_ruler, ellipse_axis_landmarks, fit_ellipse, marker_patch

CSV_COLUMNS = ("image", "measurement", "x1", "y1", "x2", "y2", "subject_id", "mm_per_pixel")
SHAPES = ("ellipse_head", "rod_femur")


@dataclass(frozen=True)
class AnnotationRecord:
    image_path: str
    measurement: MeasurementKind
    points: tuple
    subject_id: str
    mm_per_pixel: Optional[float] = None

    def pair(self) -> LandmarkPair:
        (x1, y1), (x2, y2) = self.points
        return LandmarkPair.from_coords(x1, y1, x2, y2, self.measurement)


@dataclass
class LoadResult:
    """Outcome of reading an annotation file.

    Every input row ends up either in an image's landmarks or in
    ``rejected`` as ``(line_number, reason)``.
    """

    images: list
    rejected: list = field(default_factory=list)
    n_rows: int = 0

    @property
    def n_loaded(self) -> int:
        return sum(len(im.landmarks) for im in self.images)

    def __iter__(self):
        return iter(self.images)

    def __len__(self):
        return len(self.images)


def load_image(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"), dtype=float)


def save_image(pixels, path) -> None:
    Image.fromarray(np.clip(np.round(pixels), 0, 255).astype(np.uint8)).save(path)


def _parse_row(row):
    missing = [c for c in ("image", "measurement", "x1", "y1", "x2", "y2") if not (row.get(c) or "").strip()]
    coords = [c for c in missing if c[0] in "xy"]
    if coords:
        n_points = 2 - len({c[1] for c in coords})
        return None, f"expected 2 points, got {n_points}"
    if missing:
        return None, f"missing columns: {', '.join(missing)}"
    try:
        kind = MeasurementKind.parse(row["measurement"])
        x1, y1, x2, y2 = (float(row[c]) for c in ("x1", "y1", "x2", "y2"))
    except (ValueError, DomainError) as e:
        return None, str(e)
    mm = (row.get("mm_per_pixel") or "").strip()
    try:
        mm = float(mm) if mm else None
    except ValueError:
        return None, f"bad mm_per_pixel {mm!r}"
    if mm is not None and not mm > 0:
        return None, f"mm_per_pixel must be positive, got {mm}"
    if (x1, y1) == (x2, y2):
        return None, "landmarks coincide"
    rec = AnnotationRecord(
        row["image"].strip(), kind, ((x1, y1), (x2, y2)), (row.get("subject_id") or "").strip(), mm
    )
    return rec, None


def read_annotation_records(csv_path):
    """Parse the CSV into records without touching image files.

    Returns ``(records, rejected, n_rows)`` where records are
    ``(line_number, AnnotationRecord)``.
    """
    records, rejected, n = [], [], 0
    with open(csv_path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or "image" not in reader.fieldnames:
            raise DomainError(f"{csv_path}: missing header with columns {CSV_COLUMNS}")
        for line, row in enumerate(reader, start=2):
            n += 1
            rec, reason = _parse_row(row)
            if rec is None:
                rejected.append((line, reason))
            else:
                records.append((line, rec))
    return records, rejected, n


def load_point_annotations(csv_path, load_pixels=True, source_id="") -> LoadResult:
    """Read point annotations and their images.

    Bad rows and unreadable or too-small images are collected in
    ``rejected``; nothing is dropped silently.
    """
    csv_path = Path(csv_path)
    records, rejected, n = read_annotation_records(csv_path)
    by_image = defaultdict(list)
    for line, rec in records:
        by_image[rec.image_path].append((line, rec))

    images = []
    for image_path, recs in by_image.items():
        full = csv_path.parent / image_path
        if load_pixels:
            try:
                pixels = load_image(full)
            except (OSError, ValueError) as e:
                rejected.extend((line, f"unreadable image {image_path}: {e}") for line, _ in recs)
                continue
        else:
            pixels = np.zeros((1, 1))
        pairs = []
        for line, rec in recs:
            pair = rec.pair()
            if load_pixels and not pair.within(pixels.shape[1], pixels.shape[0]):
                rejected.append((line, "landmark outside image bounds"))
            else:
                pairs.append(pair)
        if not pairs:
            continue
        scales = {r.mm_per_pixel for _, r in recs if r.mm_per_pixel is not None}
        subjects = {r.subject_id for _, r in recs}
        if len(scales) > 1 or len(subjects) > 1:
            rejected.extend((line, "conflicting subject/scale for one image") for line, _ in recs)
            continue
        images.append(
            AnnotatedImage(
                pixels,
                pairs,
                mm_per_pixel=scales.pop() if scales else None,
                subject_id=subjects.pop(),
                source_id=source_id,
                image_id=image_path,
            )
        )
    rejected.sort()
    return LoadResult(images, rejected, n)


def save_point_annotations(images, csv_path, write_pixels=False) -> None:
    """Write images' landmark pairs to the CSV schema.

    ``image_id`` is used as the path relative to the CSV. With
    ``write_pixels`` the images are written there as PNG as well.
    """
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for im in images:
            if write_pixels:
                target = csv_path.parent / im.image_id
                target.parent.mkdir(parents=True, exist_ok=True)
                save_image(im.pixels, target)
            for p in im.landmarks:
                w.writerow(
                    [
                        im.image_id,
                        p.measurement.value,
                        repr(p.first.x),
                        repr(p.first.y),
                        repr(p.second.x),
                        repr(p.second.y),
                        im.subject_id,
                        "" if im.mm_per_pixel is None else repr(im.mm_per_pixel),
                    ]
                )


def convert_via(via_json_path, csv_path, measurement_key="measurement", default_kind=None):
    """Convert a VIA point-region export to the annotation CSV.

    Point regions are grouped per file by ``region_attributes[measurement_key]``
    (or ``default_kind``) in region order. Groups without exactly two points
    are reported in the returned list of ``(filename, reason)``.
    """
    data = json.loads(Path(via_json_path).read_text())
    if "_via_img_metadata" in data:
        data = data["_via_img_metadata"]
    rows, rejected = [], []
    for entry in data.values():
        fname = entry["filename"]
        subject = str(entry.get("file_attributes", {}).get("subject_id", Path(fname).stem))
        scale = entry.get("file_attributes", {}).get("mm_per_pixel", "")
        groups = defaultdict(list)
        for region in entry.get("regions", []):
            shape = region.get("shape_attributes", {})
            if shape.get("name") != "point":
                continue
            kind = region.get("region_attributes", {}).get(measurement_key) or default_kind
            if kind is None:
                rejected.append((fname, "point without measurement label"))
                continue
            groups[str(kind).upper()].append((float(shape["cx"]), float(shape["cy"])))
        for kind, pts in groups.items():
            if len(pts) != 2:
                rejected.append((fname, f"{kind}: expected 2 points, got {len(pts)}"))
                continue
            (x1, y1), (x2, y2) = pts
            rows.append([fname, kind, x1, y1, x2, y2, subject, scale])
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        w.writerows(rows)
    return rejected


def mask_contour(mask) -> np.ndarray:
    """Sub-pixel outline ``(x, y)`` of the largest connected region of ``mask``.

    Outline-only masks are filled first. The outline is the 0.5 iso-contour
    of the binary region.
    """
    mask = np.asarray(mask) > 0
    if not mask.any():
        raise SkipRecord("empty mask")
    filled = ndimage.binary_fill_holes(mask)
    labels, n = ndimage.label(filled, structure=np.ones((3, 3)))
    sizes = ndimage.sum(filled, labels, index=np.arange(1, n + 1))
    region = labels == (1 + int(np.argmax(sizes)))
    padded = np.pad(region.astype(float), 1)
    contours = skmeasure.find_contours(padded, 0.5)
    contour = max(contours, key=len) - 1.0
    return contour[:, ::-1]


def derive_landmarks_from_mask(mask) -> dict:
    """OFD and BPD landmark pairs from a head-circumference mask.

    Raises
    ------
    SkipRecord
        For an empty mask or when no ellipse fits the outline.
    """
    contour = mask_contour(mask)
    try:
        ellipse = fit_ellipse(contour)
    except EllipseFitError as e:
        raise SkipRecord(f"ellipse fit failed: {e}") from e
    return ellipse_axis_landmarks(ellipse)


def convert_hc_masks(pairs, csv_path, source_id="HC18"):
    """Derive OFD/BPD annotations from ``(image_path, mask_path, subject, mm)`` tuples.

    Paths in the written CSV are relative to its directory. Returns the list
    of ``(image_path, reason)`` records that were skipped.
    """
    csv_path = Path(csv_path)
    rows, skipped = [], []
    for image_path, mask_path, subject, mm in pairs:
        try:
            mask = load_image(mask_path)
            axes = derive_landmarks_from_mask(mask)
        except (OSError, BiometryError, DomainError) as e:
            skipped.append((str(image_path), str(e)))
            continue
        h, w = mask.shape
        rel = Path(image_path)
        try:
            rel = rel.resolve().relative_to(csv_path.parent.resolve())
        except ValueError:
            pass
        for kind in (MeasurementKind.OFD, MeasurementKind.BPD):
            p = axes[kind]
            if not p.within(w, h):
                skipped.append((str(image_path), f"{kind.value} axis leaves the image"))
                continue
            rows.append([str(rel), kind.value, p.first.x, p.first.y, p.second.x, p.second.y, subject, "" if mm is None else mm])
    with open(csv_path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(CSV_COLUMNS)
        wr.writerows(rows)
    return skipped


@dataclass(frozen=True)
class SplitManifest:
    train: tuple
    test: tuple
    subject_disjoint: bool = True
    seed: int = 0
    test_fraction: float = 0.5

    def to_dict(self):
        return {
            "train": list(self.train),
            "test": list(self.test),
            "subject_disjoint": self.subject_disjoint,
            "seed": self.seed,
            "test_fraction": self.test_fraction,
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        d = json.loads(Path(path).read_text())
        return cls(tuple(d["train"]), tuple(d["test"]), d["subject_disjoint"], d["seed"], d["test_fraction"])

    def select(self, images, side="train"):
        ids = set(self.train if side == "train" else self.test)
        return [im for im in images if im.image_id in ids]


def make_split(images, test_fraction=0.5, seed=0, subject_disjoint=True) -> SplitManifest:
    """Random train/test split of image ids, grouped by subject by default.

    Split head and femur images together: a subject appearing in both then
    lands on the same side of every per-measurement subset.
    """
    if not 0 < test_fraction < 1:
        raise DomainError("test_fraction must be in (0, 1)")
    groups = defaultdict(list)
    for im in images:
        key = im.subject_id if subject_disjoint else im.image_id
        groups[key].append(im.image_id)
    keys = sorted(groups)
    n_test = int(round(test_fraction * len(keys)))
    if n_test == 0 or n_test == len(keys):
        raise DomainError(f"{len(keys)} groups are too few for test_fraction={test_fraction}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(keys))
    test_keys = {keys[i] for i in order[:n_test]}
    train = tuple(i for k in keys if k not in test_keys for i in groups[k])
    test = tuple(i for k in keys if k in test_keys for i in groups[k])
    return SplitManifest(train, test, subject_disjoint, seed, test_fraction)


@dataclass(frozen=True)
class SyntheticConfig:
    """Generator settings; lengths are fractions of the image size.

    Orientation is the angle of the landmark axis from +x in degrees; the
    first landmark sits at ``centre - half_axis * (cos t, sin t)``.
    """

    image_size: int = 128
    n_images: int = 100
    shape: str = "ellipse_head"
    position_jitter: float = 0.1
    size_range: tuple = (0.22, 0.32)
    aspect_range: tuple = (0.7, 0.85)
    orientation_range_deg: tuple = (-30.0, 30.0)
    speckle: float = 0.35
    mm_per_pixel: float = 0.2
    ruler: bool = False
    ruler_spacing_px: int = 10
    ruler_width: int = 9
    seed: int = 0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise DomainError(f"shape must be one of {SHAPES}")
        if self.n_images < 1 or self.image_size < 16:
            raise DomainError("need n_images >= 1 and image_size >= 16")
        lo, hi = self.size_range
        if not 0 < lo <= hi < 0.5 - self.position_jitter:
            raise DomainError("size_range does not fit in the image")
        lo, hi = self.orientation_range_deg
        if not -180 <= lo <= hi <= 180:
            raise DomainError("orientation range outside [-180, 180]")

    @property
    def ruler_band(self):
        s = self.image_size
        return (s - self.ruler_width, 0, s, s)

    @property
    def ruler_spacing_mm(self):
        return self.ruler_spacing_px * self.mm_per_pixel

    def ruler_template(self) -> RulerTemplate:
        return RulerTemplate(marker_patch(7, 3), self.ruler_spacing_mm, self.ruler_band)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("size_range", "aspect_range", "orientation_range_deg"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def _render_ellipse(yy, xx, c, a, b, theta, thickness=2.5):
    ct, st = math.cos(theta), math.sin(theta)
    dx, dy = xx - c[0], yy - c[1]
    u = (dx * ct + dy * st) / a
    v = (-dx * st + dy * ct) / b
    rho = np.sqrt(u * u + v * v)
    shell = np.exp(-(((rho - 1.0) * min(a, b) / thickness) ** 2))
    inner = 0.25 * (rho < 1)
    return shell + inner


def _render_rod(yy, xx, p, q, thickness=3.0):
    d = q - p
    t = np.clip(((xx - p[0]) * d[0] + (yy - p[1]) * d[1]) / (d @ d), 0, 1)
    dist = np.hypot(xx - (p[0] + t * d[0]), yy - (p[1] + t * d[1]))
    return np.exp(-((dist / thickness) ** 2))


def _sample_pose(cfg, rng):
    s = cfg.image_size
    c = (s - 1) / 2 + rng.uniform(-cfg.position_jitter, cfg.position_jitter, size=2) * s
    half = rng.uniform(*cfg.size_range) * s
    theta = math.radians(rng.uniform(*cfg.orientation_range_deg))
    aspect = rng.uniform(*cfg.aspect_range)
    return c, half, aspect, theta


def _fits(points, cfg, margin=3.0):
    s = cfg.image_size
    xmax = cfg.ruler_band[0] - margin if cfg.ruler else s - 1 - margin
    p = np.asarray(points)
    return bool(np.all(p[:, 0] >= margin) and np.all(p[:, 0] <= xmax) and np.all(p[:, 1] >= margin) and np.all(p[:, 1] <= s - 1 - margin))


def generate_synthetic(config: SyntheticConfig) -> list:
    """Render ultrasound-like images with exact landmark ground truth.

    ``ellipse_head`` images carry OFD (major axis) and BPD (minor axis)
    pairs; ``rod_femur`` images carry an FL pair. Pixel values are integers
    in [0, 255] stored as floats, so PNG round trips are lossless.
    """
    rng = check_random_state(config.seed)
    s = config.image_size
    yy, xx = np.mgrid[0:s, 0:s].astype(float)
    out = []
    for k in range(config.n_images):
        for _ in range(1000):
            c, half, aspect, theta = _sample_pose(config, rng)
            u = np.array([math.cos(theta), math.sin(theta)])
            n = np.array([-u[1], u[0]])
            if config.shape == "ellipse_head":
                minor = half * aspect
                extent = [c + half * u, c - half * u, c + minor * n, c - minor * n]
                bbox_pts = c + np.array([[sx * half, sy * half] for sx in (-1, 1) for sy in (-1, 1)])
            else:
                extent = [c - half * u, c + half * u]
                bbox_pts = extent
            if _fits(extent, config) and _fits(bbox_pts if config.ruler else extent, config):
                break
        else:
            raise DomainError("could not place a shape inside the frame")

        if config.shape == "ellipse_head":
            signal = _render_ellipse(yy, xx, c, half, half * aspect, theta)
            landmarks = [
                LandmarkPair(Point2D(*(c - half * u)), Point2D(*(c + half * u)), MeasurementKind.OFD),
                LandmarkPair(Point2D(*(c - minor * n)), Point2D(*(c + minor * n)), MeasurementKind.BPD),
            ]
        else:
            p, q = c - half * u, c + half * u
            signal = _render_rod(yy, xx, p, q)
            landmarks = [LandmarkPair(Point2D(*p), Point2D(*q), MeasurementKind.FL)]

        background = 0.15 + 0.05 * np.sin(xx / s * math.pi) * np.cos(yy / s * math.pi)
        clean = background + 0.8 * signal
        noise = rng.rayleigh(scale=1.0, size=clean.shape) / math.sqrt(math.pi / 2)
        img = clean * (1 + config.speckle * (noise - 1))
        img = np.clip(np.round(img * 255), 0, 255)
        if config.ruler:
            x0, y0, x1, y1 = config.ruler_band
            img[y0:y1, x0:x1] = 0
            draw_ruler(img, config.ruler_band, config.ruler_spacing_px, marker=3, value=255)
        out.append(
            AnnotatedImage(
                img,
                landmarks,
                mm_per_pixel=config.mm_per_pixel,
                subject_id=f"s{k:05d}",
                source_id="synthetic",
                image_id=f"images/{k:05d}.png",
                metadata={"angle_deg": math.degrees(theta), "centre": c.tolist(), "half_axis": half},
            )
        )
    return out


def write_synthetic(images, out_dir, csv_name="annotations.csv") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / csv_name
    save_point_annotations(images, csv_path, write_pixels=True)
    return csv_path

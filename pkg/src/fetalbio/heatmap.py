"""Gaussian heatmap targets, argmax decoding and the MSE training loss.

Heatmap cell ``(i, j)`` covers input pixels whose centre maps to
``(stride * (j + 0.5), stride * (i + 0.5))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LandmarkPair, Point2D
from .exceptions import DomainError


@dataclass(frozen=True)
class HeatmapConfig:
    sigma: float = 2.0
    stride: int = 4
    truncation_radius: float = 6.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError("sigma must be positive")
        if int(self.stride) != self.stride or self.stride < 1:
            raise DomainError("stride must be an integer >= 1")
        if self.truncation_radius < 3 * self.sigma:
            raise DomainError("truncation_radius must be >= 3 * sigma")

    @classmethod
    def default_for(cls, sigma=2.0, stride=4):
        return cls(sigma=sigma, stride=stride, truncation_radius=3 * sigma)


@dataclass(frozen=True, eq=False)
class HeatmapStack:
    maps: np.ndarray
    stride: int

    def __post_init__(self):
        maps = np.asarray(self.maps, dtype=float)
        if maps.ndim != 3 or maps.shape[0] != 2:
            raise DomainError(f"heatmap stack must have shape (2, h, w), got {maps.shape}")
        if not np.all(np.isfinite(maps)):
            raise DomainError("heatmap stack contains non-finite values")
        object.__setattr__(self, "maps", maps)

    @property
    def shape(self):
        return self.maps.shape


@dataclass(frozen=True, eq=False)
class DecodedPair:
    """Decoded landmark coordinates with per-channel peak values.

    ``low_confidence`` flags channels that were constant, where the location
    is only the tie-break cell.
    """

    points: np.ndarray
    confidence: tuple
    low_confidence: tuple
    measurement: object = None

    @property
    def flagged(self) -> bool:
        return any(self.low_confidence)

    @property
    def pair(self) -> LandmarkPair:
        """The decoded landmarks as a pair; fails if both coincide."""
        (x1, y1), (x2, y2) = self.points
        return LandmarkPair(Point2D(x1, y1), Point2D(x2, y2), self.measurement)


def grid_shape(height, width, stride):
    return -(-int(height) // stride), -(-int(width) // stride)


def to_grid(x, stride):
    """Continuous heatmap coordinate of an input-pixel coordinate."""
    return np.asarray(x, dtype=float) / stride - 0.5


def from_grid(j, stride):
    return stride * (np.asarray(j, dtype=float) + 0.5)


def gaussian_map(center_xy, shape, config: HeatmapConfig) -> np.ndarray:
    """Unnormalized Gaussian (peak 1) at the grid cell nearest ``center_xy``.

    ``center_xy`` is in input pixels. Values outside a square window of
    half-width ``truncation_radius`` (heatmap cells) are zero.
    """
    h, w = shape
    cx = int(np.floor(to_grid(center_xy[0], config.stride) + 0.5))
    cy = int(np.floor(to_grid(center_xy[1], config.stride) + 0.5))
    cx, cy = min(max(cx, 0), w - 1), min(max(cy, 0), h - 1)
    xs = np.arange(w) - cx
    ys = np.arange(h) - cy
    gx = np.exp(-(xs**2) / (2 * config.sigma**2))
    gy = np.exp(-(ys**2) / (2 * config.sigma**2))
    gx[np.abs(xs) > config.truncation_radius] = 0.0
    gy[np.abs(ys) > config.truncation_radius] = 0.0
    return np.outer(gy, gx)


def encode(pair: LandmarkPair, height, width, config: HeatmapConfig = HeatmapConfig()) -> HeatmapStack:
    if not pair.within(width, height):
        raise DomainError(f"landmarks {pair} outside the {width}x{height} image")
    shape = grid_shape(height, width, config.stride)
    maps = np.stack(
        [gaussian_map((p.x, p.y), shape, config) for p in (pair.first, pair.second)]
    )
    return HeatmapStack(maps, config.stride)


def encode_array(points, height, width, config: HeatmapConfig = HeatmapConfig()) -> np.ndarray:
    """Targets for a ``(2, 2)`` pixel array; no bounds check (used by the trainer)."""
    shape = grid_shape(height, width, config.stride)
    return np.stack([gaussian_map(p, shape, config) for p in np.asarray(points)])


def _refine(channel, i, j):
    # quadratic peak interpolation along each axis
    def offset(lo, mid, hi):
        denom = lo - 2 * mid + hi
        return 0.0 if denom >= 0 else float(np.clip(0.5 * (lo - hi) / denom, -0.5, 0.5))

    h, w = channel.shape
    dx = offset(channel[i, j - 1], channel[i, j], channel[i, j + 1]) if 0 < j < w - 1 else 0.0
    dy = offset(channel[i - 1, j], channel[i, j], channel[i + 1, j]) if 0 < i < h - 1 else 0.0
    return dy, dx


def decode_maps(maps, stride, subpixel=False):
    """Argmax locations of each channel of ``maps`` (``(c, h, w)``).

    Returns ``(coords, peaks, flat)``: input-pixel coordinates ``(c, 2)``,
    peak values and a per-channel flag for constant channels. Ties go to the
    smallest row-major index.
    """
    maps = np.asarray(maps, dtype=float)
    c, h, w = maps.shape
    flat_maps = maps.reshape(c, -1)
    idx = np.argmax(flat_maps, axis=1)
    i, j = np.divmod(idx, w)
    peaks = flat_maps[np.arange(c), idx]
    flat = np.all(flat_maps == flat_maps[:, :1], axis=1)
    fi, fj = i.astype(float), j.astype(float)
    if subpixel:
        for k in range(c):
            if not flat[k]:
                dy, dx = _refine(maps[k], i[k], j[k])
                fi[k] += dy
                fj[k] += dx
    coords = np.column_stack([from_grid(fj, stride), from_grid(fi, stride)])
    return coords, peaks, flat


def decode(stack: HeatmapStack, measurement=None, subpixel: bool = False) -> DecodedPair:
    """Landmarks at the maximum of each channel, in input-image pixels."""
    coords, peaks, flat = decode_maps(stack.maps, stack.stride, subpixel)
    return DecodedPair(
        coords,
        tuple(float(p) for p in peaks),
        tuple(bool(f) for f in flat),
        measurement,
    )


def _check_same(predicted, target):
    p = predicted.maps if isinstance(predicted, HeatmapStack) else np.asarray(predicted, float)
    t = target.maps if isinstance(target, HeatmapStack) else np.asarray(target, float)
    if p.shape != t.shape:
        raise DomainError(f"shape mismatch: {p.shape} vs {t.shape}")
    return p, t


def mse_loss(predicted, target) -> float:
    p, t = _check_same(predicted, target)
    return float(np.mean((p - t) ** 2))


def mse_loss_grad(predicted, target) -> np.ndarray:
    """Gradient of :func:`mse_loss` with respect to ``predicted``."""
    p, t = _check_same(predicted, target)
    return 2.0 * (p - t) / p.size

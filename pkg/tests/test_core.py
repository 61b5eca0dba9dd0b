import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fetalbio.core import (
    AnnotatedImage,
    LandmarkPair,
    MeasurementKind,
    Point2D,
    denormalize,
    euclidean_distance,
    normalize,
)
from fetalbio.exceptions import DomainError


@pytest.mark.parametrize(
    "p, expected",
    [((0, 0), (0.0, 0.0)), ((64, 32), (0.5, 0.25)), ((127, 127), (0.9921875, 0.9921875))],
)
def test_normalize(p, expected):
    q = normalize(Point2D(*p), 128, 128)
    assert (q.u, q.v) == expected


@pytest.mark.parametrize("p", [(-1, 0), (128, 0), (0, 128), (5, -0.1)])
def test_normalize_out_of_bounds(p):
    with pytest.raises(DomainError):
        normalize(Point2D(*p), 128, 128)


@given(st.integers(1, 4096), st.integers(1, 4096), st.data())
def test_normalize_roundtrip_integer_pixels(w, h, data):
    x = data.draw(st.integers(0, w - 1))
    y = data.draw(st.integers(0, h - 1))
    p = Point2D(x, y)
    assert denormalize(normalize(p, w, h), w, h) == p


def test_distance_examples():
    assert euclidean_distance(Point2D(0, 0), Point2D(3, 4)) == 5.0
    assert euclidean_distance(Point2D(2.5, 7), Point2D(2.5, 7)) == 0.0
    assert euclidean_distance(Point2D(1, 1), Point2D(4, 5)) == 5.0


finite = st.floats(-1e4, 1e4, allow_nan=False)


@given(*(finite,) * 6)
def test_distance_symmetric_and_triangle(ax, ay, bx, by, cx, cy):
    a, b, c = Point2D(ax, ay), Point2D(bx, by), Point2D(cx, cy)
    assert euclidean_distance(a, b) == euclidean_distance(b, a)
    assert euclidean_distance(a, c) <= euclidean_distance(a, b) + euclidean_distance(b, c) + 1e-9


def test_point_rejects_non_finite():
    with pytest.raises(DomainError):
        Point2D(math.nan, 0)


def test_pair_rejects_coincident_points():
    with pytest.raises(DomainError):
        LandmarkPair(Point2D(1, 1), Point2D(1, 1), "OFD")


def test_measurement_kind_has_three_variants():
    assert {k.value for k in MeasurementKind} == {"OFD", "BPD", "FL"}
    assert MeasurementKind.parse("bpd") is MeasurementKind.BPD
    with pytest.raises(DomainError):
        MeasurementKind.parse("AC")


def test_annotated_image_bounds():
    pair = LandmarkPair.from_coords(1, 1, 9, 9, "FL")
    im = AnnotatedImage(np.zeros((10, 10)), [pair], mm_per_pixel=0.1)
    assert im.pair("FL") is pair
    with pytest.raises(DomainError):
        AnnotatedImage(np.zeros((10, 10)), [LandmarkPair.from_coords(1, 1, 10, 9, "FL")])
    with pytest.raises(DomainError):
        AnnotatedImage(np.zeros((10, 10)), [pair], mm_per_pixel=0.0)

import math

import numpy as np
import pytest

from fetalbio.core import LandmarkPair
from fetalbio.exceptions import DomainError
from fetalbio.heatmap import (
    HeatmapConfig,
    HeatmapStack,
    decode,
    encode,
    from_grid,
    mse_loss,
    mse_loss_grad,
)

CFG = HeatmapConfig(sigma=2.0, stride=4, truncation_radius=6.0)


def cell_centre(i, j, stride=4):
    return stride * (j + 0.5), stride * (i + 0.5)


def test_grid_aligned_peak_is_one():
    x, y = cell_centre(5, 7)
    st = encode(LandmarkPair.from_coords(x, y, 40, 40, "FL"), 64, 64, CFG)
    assert st.shape == (2, 16, 16)
    assert st.maps[0, 5, 7] == 1.0
    assert st.maps[0].max() == 1.0


def test_value_one_sigma_away():
    x, y = cell_centre(8, 8)
    st = encode(LandmarkPair.from_coords(x, y, 2, 2, "FL"), 64, 64, CFG)
    assert st.maps[0, 8, 10] == pytest.approx(math.exp(-0.5), rel=1e-12)
    assert st.maps[0, 6, 8] == pytest.approx(0.6065306597, rel=1e-9)


def test_truncation_window():
    x, y = cell_centre(10, 10)
    st = encode(LandmarkPair.from_coords(x, y, 2, 2, "FL"), 128, 128, CFG)
    assert st.maps[0, 10, 16] > 0
    assert st.maps[0, 10, 17] == 0.0


@pytest.mark.parametrize("sigma", [2.0, 3.0])
def test_mass_matches_unnormalized_gaussian(sigma):
    cfg = HeatmapConfig.default_for(sigma=sigma, stride=4)
    st = encode(LandmarkPair.from_coords(*cell_centre(30, 30), *cell_centre(20, 40), "OFD"), 256, 256, cfg)
    for k in range(2):
        assert st.maps[k].sum() == pytest.approx(2 * math.pi * sigma**2, rel=0.01)


def test_roundtrip_all_pixels_64():
    worst = 0.0
    for y in range(64):
        for x in range(64):
            other = (63 - x, 63 - y) if (63 - x, 63 - y) != (x, y) else (0, 0)
            pair = LandmarkPair.from_coords(x, y, *other, "OFD")
            dec = decode(encode(pair, 64, 64, CFG))
            worst = max(worst, np.abs(dec.points - pair.as_array()).max())
    assert worst <= 2.0


def test_grid_aligned_roundtrip_exact():
    pair = LandmarkPair.from_coords(*cell_centre(3, 4), *cell_centre(12, 1), "BPD")
    dec = decode(encode(pair, 64, 64, CFG), "BPD")
    assert dec.pair == pair
    assert dec.confidence == (1.0, 1.0)
    assert not dec.flagged


def test_single_nonzero_cell():
    maps = np.zeros((2, 16, 16))
    maps[0, 3, 9] = 0.7
    maps[1, 15, 0] = 2.0
    dec = decode(HeatmapStack(maps, 4))
    assert dec.points.tolist() == [[38.0, 14.0], [2.0, 62.0]]


def test_uniform_channel_flagged():
    maps = np.zeros((2, 8, 8))
    maps[1, 4, 4] = 1
    dec = decode(HeatmapStack(maps, 4))
    assert dec.points[0].tolist() == [2.0, 2.0]
    assert dec.low_confidence == (True, False)


def test_subpixel_refinement_recovers_offset():
    # Gaussian centred between cells: argmax is cell-quantized, refinement is not
    h = w = 16
    yy, xx = np.mgrid[0:h, 0:w]
    g = np.exp(-((xx - 6.3) ** 2 + (yy - 9.0) ** 2) / 8.0)
    st = HeatmapStack(np.stack([g, g[::-1]]), 4)
    coarse = decode(st).points[0]
    fine = decode(st, subpixel=True).points[0]
    assert coarse[0] == from_grid(6, 4)
    assert abs(fine[0] - from_grid(6.3, 4)) < abs(coarse[0] - from_grid(6.3, 4))


def test_translation_equivariance():
    base = LandmarkPair.from_coords(*cell_centre(6, 6), *cell_centre(9, 3), "FL")
    shifted = LandmarkPair.from_coords(base.first.x + 4, base.first.y, base.second.x + 4, base.second.y, "FL")
    a = encode(base, 64, 64, CFG).maps
    b = encode(shifted, 64, 64, CFG).maps
    assert np.array_equal(b[:, :, 1:], a[:, :, :-1])


def test_encode_out_of_bounds():
    with pytest.raises(DomainError):
        encode(LandmarkPair.from_coords(64, 3, 2, 2, "FL"), 64, 64, CFG)


def test_config_invariants():
    with pytest.raises(DomainError):
        HeatmapConfig(sigma=2, stride=4, truncation_radius=5)
    with pytest.raises(DomainError):
        HeatmapConfig(sigma=0)
    with pytest.raises(DomainError):
        HeatmapConfig(stride=0)


def brute_mse(a, b):
    total, n = 0.0, 0
    for x, y in zip(np.ravel(a), np.ravel(b)):
        total += (x - y) ** 2
        n += 1
    return total / n


def test_mse_examples(rng):
    cfg = HeatmapConfig(sigma=2.0, stride=1, truncation_radius=6.0)
    t = encode(LandmarkPair.from_coords(1, 1, 2, 2, "OFD"), 4, 4, cfg)
    # hand sum of exp(-d^2 / 4)^2 over the 4x4 grid for both channels
    expected = 0.0
    for cx, cy in ((1, 1), (2, 2)):
        for i in range(4):
            for j in range(4):
                expected += math.exp(-((j - cx) ** 2 + (i - cy) ** 2) / 4.0)
    expected /= 32
    assert mse_loss(HeatmapStack(np.zeros((2, 4, 4)), 1), t) == pytest.approx(expected, rel=1e-12)
    assert mse_loss(t, t) == 0.0
    a, b = rng.normal(size=(2, 2, 5, 5))
    assert mse_loss(a, b) == mse_loss(b, a)
    assert mse_loss(a, b) == pytest.approx(brute_mse(a, b), rel=1e-12)


def test_mse_shape_mismatch():
    with pytest.raises(DomainError):
        mse_loss(np.zeros((2, 4, 4)), np.zeros((2, 4, 5)))


def test_mse_gradient_finite_differences(rng):
    p, t = rng.normal(size=(2, 2, 3, 3))
    g = mse_loss_grad(p, t)
    h = 1e-6
    num = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        e = np.zeros_like(p)
        e[idx] = h
        num[idx] = (mse_loss(p + e, t) - mse_loss(p - e, t)) / (2 * h)
    assert np.allclose(g, num, rtol=1e-5, atol=1e-10)

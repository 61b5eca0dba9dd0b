import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.mixture import GaussianMixture

from fetalbio.core import LandmarkPair, NormalizedPoint, Point2D
from fetalbio.dod import (
    GmmFitConfig,
    OrientationEstimator,
    OrientationModel,
    canonical_direction,
    fit_gmm,
    fit_orientation,
    fit_orientation_array,
    order_pairs,
    project,
    projection,
    reassign,
)
from fetalbio.exceptions import ConvergenceError, DegenerateOrientationError, DomainError


def two_cluster_pairs(rng, c1, c2, n=100, var=1e-4):
    a = rng.normal(c1, np.sqrt(var), size=(n, 2))
    b = rng.normal(c2, np.sqrt(var), size=(n, 2))
    swap = rng.random(n) < 0.5
    first = np.where(swap[:, None], b, a)
    second = np.where(swap[:, None], a, b)
    return np.stack([first, second], axis=1)


def nearest_centroid_means(points, centroids):
    d = ((points[:, None, :] - centroids[None]) ** 2).sum(-1)
    lab = d.argmin(1)
    return np.stack([points[lab == k].mean(0) for k in range(len(centroids))])


def test_horizontal_clusters(rng):
    X = two_cluster_pairs(rng, (0.2, 0.5), (0.8, 0.5))
    m = fit_orientation_array(X)
    cents = np.array([m.centroid_1.as_array(), m.centroid_2.as_array()])
    assert np.allclose(cents, [(0.2, 0.5), (0.8, 0.5)], atol=0.01)
    assert np.allclose(m.direction, (0.6, 0.0), atol=0.01)
    oracle = nearest_centroid_means(X.reshape(-1, 2), cents)
    assert np.abs(oracle - cents).max() < 1e-3


def test_vertical_clusters(rng):
    X = two_cluster_pairs(rng, (0.5, 0.2), (0.5, 0.8))
    m = fit_orientation_array(X)
    assert abs(m.direction[0]) < 0.01
    assert abs(abs(m.direction[1]) - 0.6) < 0.01


def test_degenerate_identical_pairs():
    X = np.full((2, 2, 2), 0.5)
    with pytest.raises(DegenerateOrientationError):
        fit_orientation_array(X)


def test_requires_two_pairs_and_single_kind():
    with pytest.raises(DegenerateOrientationError):
        fit_orientation([LandmarkPair.from_coords(1, 1, 5, 5, "FL")], (10, 10))
    pairs = [LandmarkPair.from_coords(1, 1, 5, 5, "FL"), LandmarkPair.from_coords(1, 2, 5, 5, "BPD")]
    with pytest.raises(DomainError):
        fit_orientation(pairs, (10, 10))


def test_fit_orientation_normalizes_by_image_size(rng):
    X = two_cluster_pairs(rng, (0.25, 0.5), (0.75, 0.5), n=40)
    sizes = rng.integers(100, 300, size=(40, 2)).astype(float)
    pix = X * sizes[:, None, :]
    pairs = [LandmarkPair.from_coords(*p.ravel(), "OFD") for p in pix]
    m = fit_orientation(pairs, sizes)
    assert m.measurement.value == "OFD"
    assert np.allclose(m.direction, (0.5, 0), atol=0.01)


def test_unnormalized_input_rejected():
    with pytest.raises(DomainError):
        fit_orientation_array(np.array([[[0, 0], [2, 2]], [[0, 1], [3, 3]]], float))


def test_em_loglik_monotone_and_matches_sklearn(rng):
    # elongated, overlapping clusters exercise real soft assignments
    A = rng.multivariate_normal((0.3, 0.4), [[0.01, 0.006], [0.006, 0.005]], 300)
    B = rng.multivariate_normal((0.6, 0.55), [[0.004, -0.001], [-0.001, 0.008]], 300)
    X = np.vstack([A, B])
    res = fit_gmm(X, GmmFitConfig(seed=3, log_likelihood_tolerance=1e-12, max_iterations=5000))
    ll = np.array(res.log_likelihoods)
    assert np.all(np.diff(ll) >= -1e-12)
    ref = GaussianMixture(2, covariance_type="full", tol=1e-12, max_iter=5000, reg_covar=1e-12,
                          means_init=res.means, random_state=0).fit(X)
    assert np.allclose(np.sort(ref.means_, 0), np.sort(res.means, 0), atol=1e-4)
    assert np.isclose(ref.score(X), ll[-1], atol=1e-6)


def test_non_convergence_carries_last_iterate(rng):
    X = two_cluster_pairs(rng, (0.2, 0.5), (0.8, 0.5)).reshape(-1, 2)
    with pytest.raises(ConvergenceError) as err:
        fit_gmm(X, GmmFitConfig(max_iterations=1))
    assert err.value.last.means.shape == (2, 2)


def test_covariance_floor_on_coincident_cluster():
    X = np.array([[0.1, 0.1]] * 10 + [[0.9, 0.9]] * 10)
    res = fit_gmm(X, GmmFitConfig(covariance_floor=1e-6))
    assert np.all(np.linalg.eigvalsh(res.covariances) >= 1e-6 - 1e-15)


@pytest.mark.parametrize(
    "p, d, expected",
    [((0.2, 0.5), (1, 0), 0.2), ((0.8, 0.1), (1, 0), 0.8), ((0.3, 0.4), (0.6, 0.8), 0.5)],
)
def test_project_examples(p, d, expected):
    model = OrientationModel.fixed(d)
    assert project(NormalizedPoint(*p), model) == pytest.approx(expected, abs=1e-15)


def test_projection_zero_direction():
    with pytest.raises(DomainError):
        projection([[0.1, 0.2]], (0.0, 0.0))


def test_reassign_example_and_swap():
    model = OrientationModel.fixed((1, 0))
    a, b = Point2D(0.2, 0.5), Point2D(0.8, 0.1)
    out = reassign(LandmarkPair(b, a, "FL"), model)
    assert (out.first, out.second) == (a, b)
    assert reassign(out, model) is out
    assert reassign(LandmarkPair(a, b, "FL"), model) == reassign(LandmarkPair(b, a, "FL"), model)


def test_reassign_pixel_units():
    model = OrientationModel.fixed((0, 1))
    pair = LandmarkPair.from_coords(10, 90, 12, 20, "BPD")
    out = reassign(pair, model, 100, 100)
    assert out.first == Point2D(12, 20)


def test_tie_break_is_lexicographic():
    model = OrientationModel.fixed((1, 0))
    pair = LandmarkPair.from_coords(0.5, 0.9, 0.5, 0.1, "BPD")
    out = reassign(pair, model)
    assert out.first == Point2D(0.5, 0.1)


def test_abs_vs_signed_ordering():
    # projections straddle zero: |r| and r disagree
    model = OrientationModel.fixed((1, -1))
    X = np.array([[[0.1, 0.5], [0.3, 0.1]]])
    r = projection(X[0], model.direction)
    assert r[0] < 0 < r[1] and abs(r[0]) > abs(r[1])
    assert np.array_equal(order_pairs(X, model, "abs")[0], X[0, ::-1])
    assert np.array_equal(order_pairs(X, model, "signed")[0], X[0])


def test_midpoint_origin():
    model = OrientationModel.fixed((1, 0))
    assert project(NormalizedPoint(0.5, 0.3), model, origin="midpoint") == pytest.approx(0.0)
    with pytest.raises(DomainError):
        project(NormalizedPoint(0.5, 0.3), model, origin="centre")


unit = st.floats(0, 1, allow_nan=False)


@settings(max_examples=300)
@given(st.lists(unit, min_size=4, max_size=4), st.floats(-3.2, 3.2), st.sampled_from(["abs", "signed"]))
def test_reassign_properties(coords, angle, ordering):
    x1, y1, x2, y2 = coords
    if (x1, y1) == (x2, y2):
        return
    model = OrientationModel.fixed((np.cos(angle), np.sin(angle)))
    pair = LandmarkPair.from_coords(x1, y1, x2, y2, "OFD")
    once = reassign(pair, model, ordering=ordering)
    assert once == reassign(pair.swapped(), model, ordering=ordering)
    assert reassign(once, model, ordering=ordering) == once
    assert {once.first, once.second} == {pair.first, pair.second}


@settings(max_examples=300)
@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4), st.floats(-np.pi, np.pi))
def test_projection_rotation_invariance(v, angle):
    p, d = np.array(v[:2]), np.array(v[2:])
    if np.hypot(*d) < 1e-3:
        return
    R = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    assert projection((R @ p)[None], R @ d)[0] == pytest.approx(projection(p[None], d)[0], abs=1e-12)


def test_canonical_direction():
    assert np.array_equal(canonical_direction((-1, 2)), (1, -2))
    assert np.array_equal(canonical_direction((0, -2)), (0, 2))
    assert np.array_equal(canonical_direction((3, -2)), (3, -2))


def test_serialization_is_deterministic(tmp_path, rng):
    X = two_cluster_pairs(rng, (0.2, 0.3), (0.7, 0.6))
    a = fit_orientation_array(X, GmmFitConfig(seed=5))
    b = fit_orientation_array(X, GmmFitConfig(seed=5))
    a.save(tmp_path / "a.json")
    b.save(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    c = OrientationModel.load(tmp_path / "a.json")
    assert np.array_equal(c.direction, a.direction)
    assert np.array_equal(c.covariances, a.covariances)


def test_estimator_api(rng):
    X = two_cluster_pairs(rng, (0.2, 0.5), (0.8, 0.5))
    est = OrientationEstimator(random_state=1)
    assert clone(est).get_params() == est.get_params()
    out = est.fit_transform(X)
    assert np.all(out[:, 0, 0] < out[:, 1, 0])
    assert est.direction_[0] > 0.5
    assert est.project([[0.2, 0.5]])[0] == pytest.approx(0.2, abs=0.01)
